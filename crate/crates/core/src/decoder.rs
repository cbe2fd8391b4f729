//! Hierarchical decoding: a sentence LSTM emits one topic vector and one
//! stop distribution per sentence; a word LSTM turns each topic into words.
//!
//! The word LSTM starts from a zero state, reads the topic vector, then the
//! START embedding, then the embedding of each emitted word. Every input after
//! the topic yields a word distribution; a sentence ends at END.

use serde::{Deserialize, Serialize};

use crate::coattention::{ablation_context, AttentionRecord, FeatureMeans};
use crate::config::TrainConfig;
use crate::corpus::{END, START};
use crate::encoder::EncoderOutput;
use crate::error::{Error, Result};
use crate::model::names;
use crate::params::ParameterStore;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// One LSTM step with gates ordered input, forget, candidate, output.
/// Weights live under `{prefix}.wx [4H, in]`, `{prefix}.wh [4H, H]`, `{prefix}.b [4H]`.
pub fn lstm_step(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let wx = tape.param(store, &format!("{prefix}.wx"))?;
    let wh = tape.param(store, &format!("{prefix}.wh"))?;
    let b = tape.param(store, &format!("{prefix}.b"))?;
    let hidden = tape.shape(wh)[1];
    if tape.shape(x) != [tape.shape(wx)[1]] || tape.shape(h) != [hidden] || tape.shape(c) != [hidden] {
        return Err(Error::dim("lstm_step", tape.shape(x), tape.shape(wx)));
    }
    let zx = tape.matmul(wx, x)?;
    let zh = tape.matmul(wh, h)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add(z, b)?;
    let gate = |tape: &mut Tape, k: usize| tape.slice(z, k * hidden, hidden);
    let i = gate(tape, 0)?;
    let f = gate(tape, 1)?;
    let g = gate(tape, 2)?;
    let o = gate(tape, 3)?;
    let i = tape.sigmoid(i)?;
    let f = tape.sigmoid(f)?;
    let g = tape.tanh(g)?;
    let o = tape.sigmoid(o)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next)?;
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Outputs of one sentence-LSTM step.
#[derive(Clone, Copy, Debug)]
pub struct SentenceStep {
    pub h: Var,
    pub c: Var,
    /// `[K]` topic vector.
    pub topic: Var,
    /// `[2]` distribution over (CONTINUE, STOP).
    pub stop: Var,
}

/// Index of STOP in the stop distribution.
pub const STOP_INDEX: usize = 1;

pub fn sentence_step(
    tape: &mut Tape,
    store: &ParameterStore,
    h_prev: Var,
    c_prev: Var,
    ctx: Var,
) -> Result<SentenceStep> {
    let (h, c) = lstm_step(tape, store, names::SENT_LSTM, ctx, h_prev, c_prev)?;

    let wth = tape.param(store, names::TOPIC_H)?;
    let wtc = tape.param(store, names::TOPIC_CTX)?;
    let a = tape.matmul(wth, h)?;
    let b = tape.matmul(wtc, ctx)?;
    let pre = tape.add(a, b)?;
    let topic = tape.tanh(pre)?;

    let ws = tape.param(store, names::STOP_OUT)?;
    let wp = tape.param(store, names::STOP_PREV)?;
    let wc = tape.param(store, names::STOP_CUR)?;
    let a = tape.matmul(wp, h_prev)?;
    let b = tape.matmul(wc, h)?;
    let pre = tape.add(a, b)?;
    let act = tape.tanh(pre)?;
    let logits = tape.matmul(ws, act)?;
    let stop = tape.softmax(logits)?;
    Ok(SentenceStep { h, c, topic, stop })
}

fn word_distribution(tape: &mut Tape, store: &ParameterStore, h: Var) -> Result<Var> {
    let w = tape.param(store, names::WORD_OUT)?;
    let logits = tape.matmul(w, h)?;
    tape.softmax(logits)
}

fn zeros_like_hidden(tape: &mut Tape, store: &ParameterStore, prefix: &str) -> Result<(Var, Var)> {
    let wh = store.require(&format!("{prefix}.wh"))?;
    let hidden = wh.shape()[1];
    Ok((
        tape.constant(Tensor::zeros(&[hidden])),
        tape.constant(Tensor::zeros(&[hidden])),
    ))
}

/// Word distributions for a ground-truth sentence: one per word plus one for END.
pub fn teacher_forced_words(
    tape: &mut Tape,
    store: &ParameterStore,
    topic: Var,
    words: &[usize],
) -> Result<Vec<Var>> {
    let (h0, c0) = zeros_like_hidden(tape, store, names::WORD_LSTM)?;
    let (mut h, mut c) = lstm_step(tape, store, names::WORD_LSTM, topic, h0, c0)?;
    let table = tape.param(store, names::WORD_EMBED)?;
    let width = tape.shape(table)[1];
    let mut inputs = Vec::with_capacity(words.len() + 1);
    inputs.push(START);
    inputs.extend_from_slice(words);
    let embedded = tape.gather_rows(table, &inputs)?;
    let flat = tape.reshape(embedded, &[inputs.len() * width])?;
    let mut dists = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let x = tape.slice(flat, t * width, width)?;
        (h, c) = lstm_step(tape, store, names::WORD_LSTM, x, h, c)?;
        dists.push(word_distribution(tape, store, h)?);
    }
    Ok(dists)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    /// Ancestral sampling from a seeded generator.
    Sample(u64),
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Decodes one sentence from a topic vector. END terminates and is not emitted.
pub fn generate_sentence(
    tape: &mut Tape,
    store: &ParameterStore,
    topic: Var,
    t_max: usize,
    rng: Option<&mut Rng>,
) -> Result<Vec<usize>> {
    let mut rng = rng;
    let (h0, c0) = zeros_like_hidden(tape, store, names::WORD_LSTM)?;
    let (mut h, mut c) = lstm_step(tape, store, names::WORD_LSTM, topic, h0, c0)?;
    let table = tape.param(store, names::WORD_EMBED)?;
    let mut prev = START;
    let mut words = Vec::new();
    while words.len() < t_max {
        let x = tape.gather_rows(table, &[prev])?;
        let width = tape.shape(x)[1];
        let x = tape.reshape(x, &[width])?;
        (h, c) = lstm_step(tape, store, names::WORD_LSTM, x, h, c)?;
        let dist = word_distribution(tape, store, h)?;
        let probs = tape.value(dist).data();
        let next = match rng.as_deref_mut() {
            Some(r) => r.categorical(probs),
            None => argmax(probs),
        };
        if next == END {
            break;
        }
        words.push(next);
        prev = next;
    }
    Ok(words)
}

/// A generated paragraph.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub sentences: Vec<Vec<usize>>,
    pub stop_probs: Vec<f64>,
    /// The sentence budget ran out before the stop head fired.
    pub truncated: bool,
}

impl Report {
    /// All words in order, sentence boundaries dropped.
    pub fn flattened(&self) -> Vec<usize> {
        self.sentences.concat()
    }
}

#[derive(Clone, Debug)]
pub struct GenerateOptions {
    pub s_max: usize,
    pub t_max: usize,
    pub stop_threshold: f64,
    pub decode: DecodeMode,
}

impl GenerateOptions {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        GenerateOptions {
            s_max: cfg.s_max,
            t_max: cfg.t_max,
            stop_threshold: cfg.stop_threshold,
            decode: DecodeMode::Greedy,
        }
    }
}

/// Unrolls the sentence LSTM until the stop probability exceeds the threshold
/// (that sentence is still emitted) or `s_max` sentences exist.
pub fn generate_report(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &TrainConfig,
    enc: &EncoderOutput,
    opts: &GenerateOptions,
) -> Result<(Report, AttentionRecord)> {
    if opts.s_max == 0 || opts.t_max == 0 {
        return Err(Error::Domain("s_max and t_max must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&opts.stop_threshold) {
        return Err(Error::Domain(format!(
            "stop threshold must lie in [0, 1), got {}",
            opts.stop_threshold
        )));
    }
    let mut rng = match opts.decode {
        DecodeMode::Greedy => None,
        DecodeMode::Sample(seed) => Some(Rng::seeded(seed)),
    };
    let means = FeatureMeans::new(tape, enc.regions, enc.semantic)?;
    let (mut h, mut c) = zeros_like_hidden(tape, store, names::SENT_LSTM)?;
    let mut report = Report {
        truncated: true,
        ..Default::default()
    };
    let mut record = AttentionRecord::default();
    for _ in 0..opts.s_max {
        let step_ctx = ablation_context(tape, store, cfg.attention_mode, enc.regions, enc.semantic, means, h)?;
        if let Some(a) = step_ctx.alpha {
            record.alpha.push(tape.value(a).data().to_vec());
        }
        if let Some(b) = step_ctx.beta {
            record.beta.push(tape.value(b).data().to_vec());
        }
        let step = sentence_step(tape, store, h, c, step_ctx.ctx)?;
        let words = generate_sentence(tape, store, step.topic, opts.t_max, rng.as_mut())?;
        let p_stop = tape.value(step.stop).data()[STOP_INDEX];
        report.sentences.push(words);
        report.stop_probs.push(p_stop);
        (h, c) = (step.h, step.c);
        if p_stop > opts.stop_threshold {
            report.truncated = false;
            break;
        }
    }
    Ok((report, record))
}

/// Distributions collected from one teacher-forced unroll.
#[derive(Clone, Debug)]
pub struct TeacherForced {
    /// Per sentence, `T_s + 1` word distributions (the last one targets END).
    pub word_dists: Vec<Vec<Var>>,
    /// Per sentence, the `[2]` stop distribution.
    pub stop_dists: Vec<Var>,
    pub alphas: Vec<Var>,
    pub betas: Vec<Var>,
}

impl TeacherForced {
    pub fn attention_record(&self, tape: &Tape) -> AttentionRecord {
        AttentionRecord {
            alpha: self.alphas.iter().map(|&a| tape.value(a).data().to_vec()).collect(),
            beta: self.betas.iter().map(|&b| tape.value(b).data().to_vec()).collect(),
        }
    }
}

/// Unrolls exactly one sentence step per ground-truth sentence.
pub fn teacher_forced_pass(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &TrainConfig,
    enc: &EncoderOutput,
    sentences: &[Vec<usize>],
) -> Result<TeacherForced> {
    if sentences.is_empty() || sentences.len() > cfg.s_max {
        return Err(Error::Domain(format!(
            "document has {} sentences, need 1..={}",
            sentences.len(),
            cfg.s_max
        )));
    }
    let means = FeatureMeans::new(tape, enc.regions, enc.semantic)?;
    let (mut h, mut c) = zeros_like_hidden(tape, store, names::SENT_LSTM)?;
    let mut out = TeacherForced {
        word_dists: Vec::with_capacity(sentences.len()),
        stop_dists: Vec::with_capacity(sentences.len()),
        alphas: Vec::new(),
        betas: Vec::new(),
    };
    for words in sentences {
        let step_ctx = ablation_context(tape, store, cfg.attention_mode, enc.regions, enc.semantic, means, h)?;
        out.alphas.extend(step_ctx.alpha);
        out.betas.extend(step_ctx.beta);
        let step = sentence_step(tape, store, h, c, step_ctx.ctx)?;
        out.word_dists.push(teacher_forced_words(tape, store, step.topic, words)?);
        out.stop_dists.push(step.stop);
        (h, c) = (step.h, step.c);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode, ImageInput};
    use crate::model::{init_params, zero_params};
    use crate::tape::sigmoid;

    fn rand_vec(n: usize, rng: &mut Rng) -> Tensor {
        Tensor::vector((0..n).map(|_| rng.uniform(-2.0, 2.0)).collect())
    }

    fn features(cfg: &TrainConfig, seed: u64) -> ImageInput {
        let mut rng = Rng::seeded(seed);
        let n = cfg.num_regions();
        let d = cfg.feature_dim;
        ImageInput::Features(Tensor::new(vec![n, d], (0..n * d).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap())
    }

    #[test]
    fn zero_lstm_from_zero_state() {
        let cfg = TrainConfig::toy();
        let store = zero_params(&cfg);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.7; cfg.context_dim]));
        let z = tape.constant(Tensor::zeros(&[cfg.hidden_dim]));
        let (h, c) = lstm_step(&mut tape, &store, names::SENT_LSTM, x, z, z).unwrap();
        let expect = sigmoid(0.0) * (sigmoid(0.0) * 0.0f64.tanh()).tanh();
        assert!(tape.value(h).data().iter().all(|&v| v == expect));
        assert!(tape.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_step_matches_scalar_equations() {
        let mut cfg = TrainConfig::toy();
        cfg.init_scale = 0.7;
        let mut rng = Rng::seeded(11);
        let store = init_params(&cfg, &mut rng);
        let hd = cfg.hidden_dim;
        let (xv, hv, cv) = (rand_vec(cfg.context_dim, &mut rng), rand_vec(hd, &mut rng), rand_vec(hd, &mut rng));
        let mut tape = Tape::new();
        let (x, h, c) = (tape.constant(xv.clone()), tape.constant(hv.clone()), tape.constant(cv.clone()));
        let (h2, c2) = lstm_step(&mut tape, &store, names::SENT_LSTM, x, h, c).unwrap();

        let wx = store.get("sent.lstm.wx").unwrap();
        let wh = store.get("sent.lstm.wh").unwrap();
        let b = store.get("sent.lstm.b").unwrap();
        let pre = |r: usize| -> f64 {
            let mut s = b.data()[r];
            for j in 0..cfg.context_dim {
                s += wx.get2(r, j) * xv.data()[j];
            }
            for j in 0..hd {
                s += wh.get2(r, j) * hv.data()[j];
            }
            s
        };
        for k in 0..hd {
            let i = sigmoid(pre(k));
            let f = sigmoid(pre(hd + k));
            let g = pre(2 * hd + k).tanh();
            let o = sigmoid(pre(3 * hd + k));
            let cn = f * cv.data()[k] + i * g;
            assert!((tape.value(c2).data()[k] - cn).abs() < 1e-13);
            assert!((tape.value(h2).data()[k] - o * cn.tanh()).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_stop_weights_give_even_odds() {
        let cfg = TrainConfig::toy();
        let mut store = init_params(&cfg, &mut Rng::seeded(2));
        store.insert(names::STOP_OUT, Tensor::zeros(&[2, cfg.stop_hidden()]));
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[cfg.hidden_dim]));
        let ctx = tape.constant(Tensor::vector(vec![0.4; cfg.context_dim]));
        let step = sentence_step(&mut tape, &store, z, z, ctx).unwrap();
        assert_eq!(tape.value(step.stop).data(), &[0.5, 0.5]);
        assert!(tape.value(step.topic).data().iter().all(|t| t.abs() < 1.0));
    }

    #[test]
    fn dominant_logit_repeats_until_t_max() {
        let cfg = TrainConfig::toy();
        let mut store = zero_params(&cfg);
        // a large forget-gate-independent positive output for token 7
        let mut b = Tensor::zeros(&[4 * cfg.hidden_dim]);
        b.data_mut()[3 * cfg.hidden_dim..].fill(5.0);
        b.data_mut()[2 * cfg.hidden_dim..3 * cfg.hidden_dim].fill(5.0);
        store.insert("word.lstm.b", b);
        let mut w_out = Tensor::zeros(&[cfg.vocab_size, cfg.hidden_dim]);
        for j in 0..cfg.hidden_dim {
            w_out.data_mut()[7 * cfg.hidden_dim + j] = 100.0;
        }
        store.insert(names::WORD_OUT, w_out);
        let mut tape = Tape::new();
        let topic = tape.constant(Tensor::zeros(&[cfg.topic_dim]));
        let words = generate_sentence(&mut tape, &store, topic, 6, None).unwrap();
        assert_eq!(words, vec![7; 6]);
    }

    #[test]
    fn decoding_is_reproducible() {
        let cfg = TrainConfig::toy();
        let store = init_params(&cfg, &mut Rng::seeded(4));
        let run = |decode: DecodeMode| {
            let mut tape = Tape::new();
            let enc = encode(&mut tape, &store, &cfg, &features(&cfg, 1), None).unwrap();
            let opts = GenerateOptions { decode, ..GenerateOptions::from_config(&cfg) };
            generate_report(&mut tape, &store, &cfg, &enc, &opts).unwrap()
        };
        assert_eq!(run(DecodeMode::Greedy), run(DecodeMode::Greedy));
        assert_eq!(run(DecodeMode::Sample(9)), run(DecodeMode::Sample(9)));
    }

    #[test]
    fn threshold_controls_sentence_count() {
        let cfg = TrainConfig::toy();
        let mut store = init_params(&cfg, &mut Rng::seeded(5));
        let mut tape = Tape::new();
        let enc = encode(&mut tape, &store, &cfg, &features(&cfg, 2), None).unwrap();
        let opts = GenerateOptions { stop_threshold: 0.0, ..GenerateOptions::from_config(&cfg) };
        let (r, rec) = generate_report(&mut tape, &store, &cfg, &enc, &opts).unwrap();
        assert_eq!(r.sentences.len(), 1);
        assert!(!r.truncated);
        assert_eq!(rec.alpha.len(), 1);

        store.insert(names::STOP_OUT, Tensor::zeros(&[2, cfg.stop_hidden()]));
        let mut tape = Tape::new();
        let enc = encode(&mut tape, &store, &cfg, &features(&cfg, 2), None).unwrap();
        let opts = GenerateOptions { stop_threshold: 1.0 - 1e-9, ..GenerateOptions::from_config(&cfg) };
        let (r, rec) = generate_report(&mut tape, &store, &cfg, &enc, &opts).unwrap();
        assert_eq!(r.sentences.len(), cfg.s_max);
        assert_eq!(r.stop_probs, vec![0.5; cfg.s_max]);
        assert!(r.truncated);
        assert_eq!(rec.steps(), cfg.s_max);
        assert!(r.sentences.iter().all(|s| s.len() <= cfg.t_max));
    }

    #[test]
    fn teacher_forcing_counts() {
        let cfg = TrainConfig::toy();
        let store = init_params(&cfg, &mut Rng::seeded(6));
        let mut tape = Tape::new();
        let enc = encode(&mut tape, &store, &cfg, &features(&cfg, 3), None).unwrap();
        let tf = teacher_forced_pass(&mut tape, &store, &cfg, &enc, &[vec![5, 6, 7]]).unwrap();
        assert_eq!(tf.stop_dists.len(), 1);
        assert_eq!(tf.word_dists[0].len(), 4);

        let sents = vec![vec![5, 6], vec![7, 8, 9, 10], vec![11]];
        let tf = teacher_forced_pass(&mut tape, &store, &cfg, &enc, &sents).unwrap();
        let total: usize = tf.word_dists.iter().map(Vec::len).sum();
        assert_eq!(total, 2 + 1 + 4 + 1 + 1 + 1);
        for d in tf.word_dists.iter().flatten().chain(&tf.stop_dists) {
            assert!((tape.value(*d).sum() - 1.0).abs() < 1e-12);
        }
        let rec = tf.attention_record(&tape);
        assert_eq!(rec.alpha.len(), 3);
        assert_eq!(rec.beta.len(), 3);
        assert_eq!(rec.alpha_matrix().len(), cfg.num_regions());

        let too_many = vec![vec![5]; cfg.s_max + 1];
        assert!(teacher_forced_pass(&mut tape, &store, &cfg, &enc, &too_many).is_err());
    }
}
