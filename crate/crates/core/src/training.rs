//! Multi-task loss, Adam, the training loop with early stopping, and checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use crate::coattention::regularizer_on_tape;
use crate::config::TrainConfig;
use crate::corpus::{Document, TagVocabulary, END};
use crate::decoder::{teacher_forced_pass, STOP_INDEX};
use crate::encoder::{encode, tag_target, ImageInput};
use crate::error::{Error, Result};
use crate::model::{init_params, param_group, ParamGroup};
use crate::params::ParameterStore;
use crate::rng::Rng;
use crate::tape::{GradientMap, Tape, Var};
use crate::tensor::{ByteCursor, Tensor};

pub use crate::coattention::ablation_context;

/// One training example with its image input already loaded.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub input: ImageInput,
    pub sentences: Vec<Vec<usize>>,
    pub tag_ids: Vec<usize>,
}

impl Example {
    /// Sentences beyond `s_max` and words beyond `t_max` are cut.
    pub fn new(
        id: impl Into<String>,
        input: ImageInput,
        sentences: &[Vec<usize>],
        tag_ids: Vec<usize>,
        cfg: &TrainConfig,
    ) -> Self {
        Example {
            id: id.into(),
            input,
            sentences: sentences
                .iter()
                .take(cfg.s_max)
                .map(|s| s.iter().copied().take(cfg.t_max).collect())
                .collect(),
            tag_ids,
        }
    }

    pub fn from_document(doc: &Document, tags: &TagVocabulary, cfg: &TrainConfig) -> Result<Self> {
        let fref = doc.feature_ref.as_ref().ok_or_else(|| {
            Error::Domain(format!("document `{}` has neither features nor image", doc.id))
        })?;
        let input = ImageInput::load_sized(fref, cfg.image_side())?;
        let tag_ids = doc.tags.iter().filter_map(|t| tags.id(t)).collect();
        Ok(Self::new(doc.id.clone(), input, &doc.sentences, tag_ids, cfg))
    }
}

/// Random features, two or three short sentences and a few tags, all drawn
/// from `rng` and sized for `cfg`.
pub fn random_example(cfg: &TrainConfig, rng: &mut Rng, id: impl Into<String>, sentences: usize) -> Example {
    let (n, d) = (cfg.num_regions(), cfg.feature_dim);
    let feats = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.uniform(-1.0, 1.0)).collect()).expect("shape");
    let first_word = crate::corpus::RESERVED.len();
    let words = cfg.vocab_size.saturating_sub(first_word).max(1);
    let sents: Vec<Vec<usize>> = (0..sentences)
        .map(|_| {
            let len = 2 + rng.below(2);
            (0..len).map(|_| first_word + rng.below(words)).collect()
        })
        .collect();
    let mut tags: Vec<usize> = (0..cfg.num_tags).collect();
    rng.shuffle(&mut tags);
    tags.truncate(2.min(cfg.num_tags));
    Example::new(id, ImageInput::Features(feats), &sents, tags, cfg)
}

/// Gradient check of the full training loss on one example.
pub fn loss_gradient_check(
    store: &ParameterStore,
    cfg: &TrainConfig,
    ex: &Example,
    eps: f64,
) -> Result<crate::params::GradCheckReport> {
    crate::params::gradient_check_detailed(store, eps, |tape, s| Ok(example_loss(tape, s, cfg, ex)?.0))
}

/// Weighted loss terms of one example; `total` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub tag: f64,
    pub sent: f64,
    pub word: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossComponents {
    fn add(&mut self, o: &LossComponents) {
        self.tag += o.tag;
        self.sent += o.sent;
        self.word += o.word;
        self.reg += o.reg;
        self.total += o.total;
    }

    fn scaled(&self, k: f64) -> LossComponents {
        LossComponents {
            tag: self.tag * k,
            sent: self.sent * k,
            word: self.word * k,
            reg: self.reg * k,
            total: self.total * k,
        }
    }
}

fn one_hot(n: usize, i: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n]);
    t.data_mut()[i] = 1.0;
    t
}

/// Records `λ_tag ℓ_tag + λ_sent Σ ℓ_sent + λ_word ΣΣ ℓ_word + ℓ_reg` for one example.
/// Examples without known tags contribute no tag term.
pub fn example_loss(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &TrainConfig,
    ex: &Example,
) -> Result<(Var, LossComponents)> {
    let gt = cfg.use_gt_tags.then_some(ex.tag_ids.as_slice());
    let enc = encode(tape, store, cfg, &ex.input, gt)?;
    let tf = teacher_forced_pass(tape, store, cfg, &enc, &ex.sentences)?;

    let mut terms: Vec<Var> = Vec::new();
    let mut parts = LossComponents::default();

    if !ex.tag_ids.is_empty() {
        let l = tape.shape(enc.tag_probs)[0];
        let mut ind = vec![0.0; l];
        for &t in &ex.tag_ids {
            if t >= l {
                return Err(Error::Domain(format!("tag id {t} outside the {l}-tag vocabulary")));
            }
            ind[t] = 1.0;
        }
        let target = tag_target(&ind)?;
        let ce = tape.cross_entropy(enc.tag_probs, Tensor::vector(target.0))?;
        let w = tape.scale(ce, cfg.lambda_tag)?;
        parts.tag = tape.value(w).item();
        terms.push(w);
    }

    let last = ex.sentences.len() - 1;
    let mut sent_terms = Vec::new();
    for (s, &dist) in tf.stop_dists.iter().enumerate() {
        let label = if s == last { STOP_INDEX } else { 1 - STOP_INDEX };
        sent_terms.push(tape.cross_entropy(dist, one_hot(2, label))?);
    }
    if let Some(sum) = tape.add_all(&sent_terms)? {
        let w = tape.scale(sum, cfg.lambda_sent)?;
        parts.sent = tape.value(w).item();
        terms.push(w);
    }

    let mut word_terms = Vec::new();
    for (words, dists) in ex.sentences.iter().zip(&tf.word_dists) {
        for (t, &dist) in dists.iter().enumerate() {
            let target = words.get(t).copied().unwrap_or(END);
            let v = tape.shape(dist)[0];
            word_terms.push(tape.cross_entropy(dist, one_hot(v, target))?);
        }
    }
    if let Some(sum) = tape.add_all(&word_terms)? {
        let w = tape.scale(sum, cfg.lambda_word)?;
        parts.word = tape.value(w).item();
        terms.push(w);
    }

    if let Some(r) = regularizer_on_tape(tape, &tf.alphas, &tf.betas, cfg.lambda_reg)? {
        parts.reg = tape.value(r).item();
        terms.push(r);
    }

    let total = match tape.add_all(&terms)? {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    parts.total = tape.value(total).item();
    Ok((total, parts))
}

/// Loss and parameter gradients for one example on a fresh tape.
pub fn example_gradients(
    store: &ParameterStore,
    cfg: &TrainConfig,
    ex: &Example,
) -> Result<(LossComponents, GradientMap)> {
    let mut tape = Tape::new();
    let (loss, parts) = example_loss(&mut tape, store, cfg, ex)?;
    let grads = tape.backward(loss)?.for_params(&tape, store);
    Ok((parts, grads))
}

pub fn example_loss_value(store: &ParameterStore, cfg: &TrainConfig, ex: &Example) -> Result<LossComponents> {
    let mut tape = Tape::new();
    Ok(example_loss(&mut tape, store, cfg, ex)?.1)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParameterStore) -> Self {
        let zeros = |s: &ParameterStore| -> BTreeMap<String, Tensor> {
            s.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect()
        };
        AdamState {
            m: zeros(store),
            v: zeros(store),
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub encoder: f64,
    pub recurrent: f64,
}

impl LearningRates {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        LearningRates {
            encoder: cfg.lr_cnn,
            recurrent: cfg.lr_rnn,
        }
    }

    pub fn for_param(&self, name: &str) -> f64 {
        match param_group(name) {
            ParamGroup::Encoder => self.encoder,
            ParamGroup::Recurrent => self.recurrent,
        }
    }
}

/// One bias-corrected Adam update. Parameters and moments are rounded to
/// `f32` afterwards so a saved checkpoint reloads to the identical model.
pub fn adam_step(
    store: &mut ParameterStore,
    grads: &GradientMap,
    state: &mut AdamState,
    lr: LearningRates,
) -> Result<()> {
    for (name, p) in store.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no gradient for `{name}`")))?;
        if g.shape() != p.shape() {
            return Err(Error::dim("adam_step", p.shape(), g.shape()));
        }
        for moments in [&state.m, &state.v] {
            if moments.get(name).map(Tensor::shape) != Some(p.shape()) {
                return Err(Error::dim("adam_step", p.shape(), &[]));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, p) in store.iter_mut() {
        let g = grads.get(name).unwrap();
        let m = state.m.get_mut(name).unwrap();
        let v = state.v.get_mut(name).unwrap();
        let rate = lr.for_param(name);
        for i in 0..p.numel() {
            let gi = g.data()[i];
            let mi = state.beta1 * m.data()[i] + (1.0 - state.beta1) * gi;
            let vi = state.beta2 * v.data()[i] + (1.0 - state.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let update = rate * (mi / bc1) / ((vi / bc2).sqrt() + state.eps);
            p.data_mut()[i] -= update;
        }
        p.round_to_f32();
        m.round_to_f32();
        v.round_to_f32();
    }
    Ok(())
}

/// Mean loss over `examples`, fanned out over worker threads and reduced in
/// example order.
pub fn evaluate_loss(store: &ParameterStore, cfg: &TrainConfig, examples: &[Example]) -> Result<LossComponents> {
    if examples.is_empty() {
        return Err(Error::Domain("cannot evaluate loss on zero examples".into()));
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(examples.len());
    let chunk = examples.len().div_ceil(workers);
    let per_chunk: Vec<Result<Vec<LossComponents>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = examples
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|ex| example_loss_value(store, cfg, ex))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("loss worker panicked")).collect()
    });
    let mut sum = LossComponents::default();
    for part in per_chunk {
        for c in part? {
            sum.add(&c);
        }
    }
    Ok(sum.scaled(1.0 / examples.len() as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean loss over the epoch's examples, each measured before its update.
    pub train: LossComponents,
    pub val_loss: Option<f64>,
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,l_tag,l_sent,l_word,l_reg";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{},{:?},{:?},{:?},{:?}",
            self.epoch,
            self.train.total,
            self.val_loss.map_or(String::new(), |v| format!("{v:?}")),
            self.train.tag,
            self.train.sent,
            self.train.word,
            self.train.reg
        )
    }
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for row in log {
        s.push_str(&row.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterStore,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub epoch: usize,
    /// Best monitored loss (validation if available, else training).
    pub best_val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Snapshot at the best monitored epoch.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub final_params: ParameterStore,
}

pub fn train(cfg: &TrainConfig, train_set: &[Example], val_set: &[Example]) -> Result<TrainOutcome> {
    train_with(cfg, train_set, val_set, |_| {})
}

/// Batch-size-1 Adam training with early stopping on the validation loss
/// (training loss when `val_set` is empty). `on_epoch` sees each log row.
pub fn train_with(
    cfg: &TrainConfig,
    train_set: &[Example],
    val_set: &[Example],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    let mut store = init_params(cfg, &mut Rng::seeded(cfg.seed));
    let mut adam = AdamState::new(&store);
    let mut order_rng = Rng::seeded(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let lr = LearningRates::from_config(cfg);

    let initial = if val_set.is_empty() {
        f64::INFINITY
    } else {
        evaluate_loss(&store, cfg, val_set)?.total
    };
    let mut best = Checkpoint {
        params: store.clone(),
        adam: adam.clone(),
        config: cfg.clone(),
        epoch: 0,
        best_val_loss: initial,
    };
    let mut log = Vec::new();
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order_rng.shuffle(&mut order);
        let mut sum = LossComponents::default();
        for &i in &order {
            let ex = &train_set[i];
            let (parts, grads) = example_gradients(&store, cfg, ex)?;
            if !parts.total.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    example: ex.id.clone(),
                    epoch,
                });
            }
            sum.add(&parts);
            adam_step(&mut store, &grads, &mut adam, lr)?;
        }
        let train = sum.scaled(1.0 / train_set.len() as f64);
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_loss(&store, cfg, val_set)?.total)
        };
        let row = EpochLog { epoch, train, val_loss };
        on_epoch(&row);
        log.push(row);

        let monitored = val_loss.unwrap_or(train.total);
        if !monitored.is_finite() {
            return Err(Error::Divergence {
                example: "<validation>".into(),
                epoch,
            });
        }
        if monitored < best.best_val_loss {
            best = Checkpoint {
                params: store.clone(),
                adam: adam.clone(),
                config: cfg.clone(),
                epoch,
                best_val_loss: monitored,
            };
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        checkpoint: best,
        log,
        final_params: store,
    })
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HGC1";
const ADAM_M: &str = "__adam.m.";
const ADAM_V: &str = "__adam.v.";
const ADAM_STEP: &str = "__adam.step";
const META: &str = "__meta";

fn text_tensor(s: &str) -> Tensor {
    Tensor::vector(s.bytes().map(f64::from).collect())
}

fn tensor_text(t: &Tensor) -> Result<String> {
    let bytes: Vec<u8> = t.data().iter().map(|&b| b as u8).collect();
    String::from_utf8(bytes).map_err(|e| Error::Parse(format!("checkpoint metadata: {e}")))
}

impl Checkpoint {
    /// `HGC1`, entry count (`u32` LE), then per entry the name length
    /// (`u32` LE), the UTF-8 name and the tensor in `HGT1` form. Parameters
    /// come first, then Adam moments and step under `__adam.*`, then
    /// `__meta` holding the config and epoch as text bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries: Vec<(String, Tensor)> = Vec::new();
        for (k, t) in self.params.iter() {
            entries.push((k.clone(), t.clone()));
        }
        for (k, t) in &self.adam.m {
            entries.push((format!("{ADAM_M}{k}"), t.clone()));
        }
        for (k, t) in &self.adam.v {
            entries.push((format!("{ADAM_V}{k}"), t.clone()));
        }
        let hi = (self.adam.step >> 24) as f64;
        let lo = (self.adam.step & 0xff_ffff) as f64;
        entries.push((ADAM_STEP.into(), Tensor::vector(vec![hi, lo])));
        let meta = format!(
            "{}epoch = {}\nbest_val_loss = {:?}\n",
            self.config.to_text(),
            self.epoch,
            self.best_val_loss
        );
        entries.push((META.into(), text_tensor(&meta)));

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, t) in entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            t.write_to(&mut out).expect("Vec write");
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor { bytes, pos: 0, base: 0 };
        if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad checkpoint magic, expected \"HGC1\"".into(),
            });
        }
        let count = cur.u32("entry count")? as usize;
        let mut params = ParameterStore::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        let mut step = None;
        let mut meta = None;
        for _ in 0..count {
            let len = cur.u32("name length")? as usize;
            let at = cur.pos;
            let name = std::str::from_utf8(cur.take(len, "name")?)
                .map_err(|_| Error::Format {
                    offset: at,
                    message: "entry name is not UTF-8".into(),
                })?
                .to_string();
            let (t, used) = Tensor::decode(&bytes[cur.pos..], cur.pos)?;
            cur.pos += used;
            if let Some(k) = name.strip_prefix(ADAM_M) {
                m.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix(ADAM_V) {
                v.insert(k.to_string(), t);
            } else if name == ADAM_STEP {
                let d = t.data();
                if d.len() != 2 {
                    return Err(Error::Format { offset: at, message: "malformed adam step".into() });
                }
                step = Some(((d[0] as u64) << 24) | d[1] as u64);
            } else if name == META {
                meta = Some(tensor_text(&t)?);
            } else {
                params.insert(name, t);
            }
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format {
                offset: cur.pos,
                message: "trailing bytes after last checkpoint entry".into(),
            });
        }
        let meta = meta.ok_or_else(|| Error::Format {
            offset: bytes.len(),
            message: "checkpoint has no metadata entry".into(),
        })?;
        let mut config_text = String::new();
        let mut epoch = 0;
        let mut best = f64::NAN;
        for line in meta.lines() {
            match line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
                Some(("epoch", val)) => {
                    epoch = val.parse().map_err(|_| Error::Parse(format!("bad epoch `{val}`")))?
                }
                Some(("best_val_loss", val)) => {
                    best = val.parse().map_err(|_| Error::Parse(format!("bad loss `{val}`")))?
                }
                _ => {
                    config_text.push_str(line);
                    config_text.push('\n');
                }
            }
        }
        for name in params.names() {
            if !m.contains_key(name) || !v.contains_key(name) {
                return Err(Error::Format {
                    offset: bytes.len(),
                    message: format!("missing optimizer moments for `{name}`"),
                });
            }
        }
        Ok(Checkpoint {
            params,
            adam: AdamState {
                m,
                v,
                step: step.unwrap_or(0),
                beta1: ADAM_BETA1,
                beta2: ADAM_BETA2,
                eps: ADAM_EPS,
            },
            config: TrainConfig::parse(&config_text)?,
            epoch,
            best_val_loss: best,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
