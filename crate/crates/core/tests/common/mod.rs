#![allow(dead_code)]

use medreport::training::Example;
use medreport::{ImageInput, Rng, Tensor, TrainConfig};

pub const FIRST_WORD: usize = 4;

/// Small model used for the end-to-end training checks.
pub fn memorization_config() -> TrainConfig {
    TrainConfig {
        feature_dim: 16,
        tag_embed_dim: 16,
        context_dim: 16,
        topic_dim: 16,
        hidden_dim: 16,
        mlc_hidden_dim: 16,
        grid: 2,
        num_tags: 8,
        vocab_size: FIRST_WORD + 24,
        top_m: 3,
        s_max: 5,
        t_max: 10,
        lr_cnn: 3e-3,
        lr_rnn: 3e-3,
        epochs: 500,
        patience: 500,
        seed: 7,
        ..TrainConfig::default()
    }
}

/// Twelve fixed sentences over a 24-word vocabulary.
fn sentence_pool() -> Vec<Vec<usize>> {
    let mut rng = Rng::seeded(99);
    (0..12)
        .map(|_| {
            let len = 4 + rng.below(3);
            (0..len).map(|_| FIRST_WORD + rng.below(24)).collect()
        })
        .collect()
}

/// Sixteen image/report pairs: seeded region features, two or three
/// sentences from a shared pool, one or two tags.
pub fn synthetic_corpus(cfg: &TrainConfig) -> Vec<Example> {
    let pool = sentence_pool();
    let mut rng = Rng::seeded(2024);
    let (n, d) = (cfg.num_regions(), cfg.feature_dim);
    (0..16)
        .map(|i| {
            let feats: Vec<f64> = (0..n * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let count = 2 + (i % 2);
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            rng.shuffle(&mut idx);
            let sentences: Vec<Vec<usize>> = idx[..count].iter().map(|&j| pool[j].clone()).collect();
            let tags = if i % 3 == 0 { vec![i % 8, (i + 3) % 8] } else { vec![i % 8] };
            Example::new(
                format!("syn{i:02}"),
                ImageInput::Features(Tensor::new(vec![n, d], feats).unwrap()),
                &sentences,
                tags,
                cfg,
            )
        })
        .collect()
}
