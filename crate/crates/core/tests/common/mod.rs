#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waldorf::tensor::{Graph, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Relative error with a small floor so exact zeros compare sanely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central finite differences of `f` with respect to every element of
/// `inputs[which]`.
pub fn numeric_grad(
    f: &dyn Fn(&mut Graph, &[Var]) -> Var,
    inputs: &[Tensor],
    which: usize,
) -> Vec<f64> {
    let eval = |ts: &[Tensor]| {
        let mut g = Graph::no_grad();
        let vars: Vec<Var> = ts.iter().map(|t| g.param(t)).collect();
        f(&mut g, &vars).item()
    };
    let mut work = inputs.to_vec();
    (0..inputs[which].numel())
        .map(|i| {
            let x0 = inputs[which].data()[i];
            work[which].data_mut()[i] = x0 + FD_STEP;
            let up = eval(&work);
            work[which].data_mut()[i] = x0 - FD_STEP;
            let down = eval(&work);
            work[which].data_mut()[i] = x0;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Analytic gradients of `f` with respect to each input.
pub fn analytic_grads(f: &dyn Fn(&mut Graph, &[Var]) -> Var, inputs: &[Tensor]) -> Vec<Vec<f64>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let loss = f(&mut g, &vars);
    let grads = g.backward(&loss).unwrap();
    vars.iter().map(|v| grads.get_or_zeros(v)).collect()
}

/// Worst relative error over every input element.
pub fn max_grad_error(f: &dyn Fn(&mut Graph, &[Var]) -> Var, inputs: &[Tensor]) -> f64 {
    let analytic = analytic_grads(f, inputs);
    let mut worst: f64 = 0.0;
    for (which, a) in analytic.iter().enumerate() {
        let n = numeric_grad(f, inputs, which);
        for (x, y) in a.iter().zip(&n) {
            worst = worst.max(rel_err(*x, *y));
        }
    }
    worst
}

pub mod oracles;

pub mod fixtures {
    use waldorf::corpus::{generate_synthetic_corpus, PackingConfig, QAExample, Vocabulary};
    use waldorf::model::ModelConfig;
    use waldorf::teacher::TeacherConfig;

    /// Packed synthetic examples at length `len`.
    pub fn synthetic_examples(seed: u64, paragraphs: usize, len: usize) -> (Vocabulary, Vec<QAExample>) {
        let corpus = generate_synthetic_corpus(seed, paragraphs);
        let vocab = Vocabulary::build(corpus.texts(), 600).unwrap();
        let examples = corpus.examples(&vocab, PackingConfig::new(len)).unwrap();
        (vocab, examples)
    }

    /// Two-block student and matching six-layer teacher, both tiny.
    pub fn tiny_pair(vocab: usize, len: usize) -> (ModelConfig, TeacherConfig) {
        let s = ModelConfig::desk(vocab, len, 16, 2, 2);
        let t = TeacherConfig {
            n_layers: 6,
            hidden_size: 16,
            embedding_size: 16,
            n_heads: 2,
            ff_size: 32,
            vocab_size: vocab,
            max_seq_len: len,
            layer_norm_eps: 1e-12,
        };
        (s, t)
    }

    /// Ten (prediction, truths, EM, F1) rows covering null and non-null
    /// combinations, with scores worked out by hand.
    pub fn metric_fixture() -> Vec<(&'static str, Vec<&'static str>, f64, f64)> {
        vec![
            ("the cat", vec!["the cat", "cat"], 1.0, 1.0),
            ("cat", vec!["black cat"], 0.0, 2.0 / 3.0),
            ("", vec![""], 1.0, 1.0),
            ("", vec!["Paris"], 0.0, 0.0),
            ("Paris", vec![""], 0.0, 0.0),
            ("New Haven.", vec!["new haven"], 1.0, 1.0),
            ("a big red dog", vec!["red dog", "the dog"], 0.0, 0.8),
            ("violin", vec!["piano"], 0.0, 0.0),
            ("truck driver", vec!["driver", "truck"], 0.0, 2.0 / 3.0),
            ("An apple", vec!["apple"], 1.0, 1.0),
        ]
    }
}
