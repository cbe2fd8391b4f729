//! Parameter layout of the full model and its initialisation.
//!
//! Names are dotted paths; everything under `enc.` (convolutional encoder,
//! tag classifier, tag embeddings) forms the encoder learning-rate group and
//! the rest (attention, sentence and word LSTMs) the recurrent group.

use crate::config::TrainConfig;
use crate::params::ParameterStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub mod names {
    pub const CONV1_W: &str = "enc.conv1.w";
    pub const CONV1_B: &str = "enc.conv1.b";
    pub const CONV2_W: &str = "enc.conv2.w";
    pub const CONV2_B: &str = "enc.conv2.b";
    pub const PROJ_W: &str = "enc.proj.w";
    pub const MLC_W1: &str = "enc.mlc.w1";
    pub const MLC_B1: &str = "enc.mlc.b1";
    pub const MLC_W2: &str = "enc.mlc.w2";
    pub const MLC_B2: &str = "enc.mlc.b2";
    pub const TAG_EMBED: &str = "enc.tag_embed";

    pub const ATT_V: &str = "att.w_v";
    pub const ATT_V_H: &str = "att.w_v_h";
    pub const ATT_V_OUT: &str = "att.w_v_att";
    pub const ATT_A: &str = "att.w_a";
    pub const ATT_A_H: &str = "att.w_a_h";
    pub const ATT_A_OUT: &str = "att.w_a_att";
    pub const ATT_FC: &str = "att.w_fc";

    pub const SENT_LSTM: &str = "sent.lstm";
    pub const TOPIC_H: &str = "sent.w_t_h";
    pub const TOPIC_CTX: &str = "sent.w_t_ctx";
    pub const STOP_OUT: &str = "sent.w_stop";
    pub const STOP_PREV: &str = "sent.w_stop_prev";
    pub const STOP_CUR: &str = "sent.w_stop_cur";

    pub const WORD_LSTM: &str = "word.lstm";
    pub const WORD_EMBED: &str = "word.embed";
    pub const WORD_OUT: &str = "word.w_out";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Recurrent,
}

pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with("enc.") {
        ParamGroup::Encoder
    } else {
        ParamGroup::Recurrent
    }
}

/// Every parameter name and shape for `cfg`.
pub fn param_shapes(cfg: &TrainConfig) -> Vec<(String, Vec<usize>)> {
    use names::*;
    let (d, e, c, k, h) = (
        cfg.feature_dim,
        cfg.tag_embed_dim,
        cfg.context_dim,
        cfg.topic_dim,
        cfg.hidden_dim,
    );
    let (ha, hs, hm) = (cfg.att_hidden(), cfg.stop_hidden(), cfg.mlc_hidden_dim);
    let (c1, c2) = (cfg.conv1_channels, cfg.conv2_channels);
    let (l, v) = (cfg.num_tags, cfg.vocab_size);
    let mut out: Vec<(String, Vec<usize>)> = vec![
        (CONV1_W.into(), vec![c1, 9]),
        (CONV1_B.into(), vec![c1]),
        (CONV2_W.into(), vec![c2, 9 * c1]),
        (CONV2_B.into(), vec![c2]),
        (PROJ_W.into(), vec![d, c2]),
        (MLC_W1.into(), vec![hm, d]),
        (MLC_B1.into(), vec![hm]),
        (MLC_W2.into(), vec![l, hm]),
        (MLC_B2.into(), vec![l]),
        (TAG_EMBED.into(), vec![l, e]),
        (ATT_V.into(), vec![ha, d]),
        (ATT_V_H.into(), vec![ha, h]),
        (ATT_V_OUT.into(), vec![1, ha]),
        (ATT_A.into(), vec![ha, e]),
        (ATT_A_H.into(), vec![ha, h]),
        (ATT_A_OUT.into(), vec![1, ha]),
        (ATT_FC.into(), vec![c, d + e]),
        (TOPIC_H.into(), vec![k, h]),
        (TOPIC_CTX.into(), vec![k, c]),
        (STOP_OUT.into(), vec![2, hs]),
        (STOP_PREV.into(), vec![hs, h]),
        (STOP_CUR.into(), vec![hs, h]),
        (WORD_EMBED.into(), vec![v, k]),
        (WORD_OUT.into(), vec![v, h]),
    ];
    for (prefix, input) in [(SENT_LSTM, c), (WORD_LSTM, k)] {
        out.push((format!("{prefix}.wx"), vec![4 * h, input]));
        out.push((format!("{prefix}.wh"), vec![4 * h, h]));
        out.push((format!("{prefix}.b"), vec![4 * h]));
    }
    out
}

/// Uniform `[-init_scale, init_scale]` weights; LSTM forget-gate biases start at 1.
pub fn init_params(cfg: &TrainConfig, rng: &mut Rng) -> ParameterStore {
    let mut store = ParameterStore::new();
    for (name, shape) in param_shapes(cfg) {
        store.init_uniform(&name, &shape, cfg.init_scale, rng);
    }
    for prefix in [names::SENT_LSTM, names::WORD_LSTM] {
        let h = cfg.hidden_dim;
        let b = store.get_mut(&format!("{prefix}.b")).unwrap();
        for v in &mut b.data_mut()[h..2 * h] {
            *v = 1.0;
        }
    }
    store
}

/// A store with every parameter set to zero (forget-gate biases included).
pub fn zero_params(cfg: &TrainConfig) -> ParameterStore {
    let mut store = ParameterStore::new();
    for (name, shape) in param_shapes(cfg) {
        store.insert(name, Tensor::zeros(&shape));
    }
    store
}
