//! Run configuration: a flat `key = value` text file mirroring [`TrainConfig`].
//! Blank lines and `#` comments are ignored; unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which context vectors feed the sentence LSTM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionMode {
    /// Unweighted means of region features and tag embeddings.
    None,
    VisualOnly,
    SemanticOnly,
    /// Visual and semantic attention, fused.
    Co,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 4] = [
        AttentionMode::None,
        AttentionMode::VisualOnly,
        AttentionMode::SemanticOnly,
        AttentionMode::Co,
    ];

    pub fn uses_visual(self) -> bool {
        matches!(self, AttentionMode::VisualOnly | AttentionMode::Co)
    }

    pub fn uses_semantic(self) -> bool {
        matches!(self, AttentionMode::SemanticOnly | AttentionMode::Co)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionMode::None => "none",
            AttentionMode::VisualOnly => "visual_only",
            AttentionMode::SemanticOnly => "semantic_only",
            AttentionMode::Co => "co",
        }
    }
}

impl FromStr for AttentionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttentionMode::None),
            "visual_only" => Ok(AttentionMode::VisualOnly),
            "semantic_only" => Ok(AttentionMode::SemanticOnly),
            "co" => Ok(AttentionMode::Co),
            _ => Err(Error::Parse(format!(
                "unknown attention mode `{s}` (none|visual_only|semantic_only|co)"
            ))),
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Region feature width D.
    pub feature_dim: usize,
    /// Tag embedding width E.
    pub tag_embed_dim: usize,
    /// Joint context width C.
    pub context_dim: usize,
    /// Topic width K, shared with the word embeddings.
    pub topic_dim: usize,
    /// Hidden width H of both LSTMs.
    pub hidden_dim: usize,
    /// Attention hidden width; 0 means "same as `hidden_dim`".
    pub att_hidden_dim: usize,
    /// Stop-control hidden width; 0 means "same as `hidden_dim`".
    pub stop_hidden_dim: usize,
    pub mlc_hidden_dim: usize,
    /// Regions per image side for the pixel encoder (N = grid²).
    pub grid: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    /// Tag vocabulary size L (taken from the tag file when training from a corpus).
    pub num_tags: usize,
    /// Word vocabulary size V including reserved ids.
    pub vocab_size: usize,
    /// Number of top tags used as semantic features (M).
    pub top_m: usize,

    pub lambda_tag: f64,
    pub lambda_sent: f64,
    pub lambda_word: f64,
    pub lambda_reg: f64,
    pub lr_cnn: f64,
    pub lr_rnn: f64,
    pub stop_threshold: f64,
    pub s_max: usize,
    pub t_max: usize,
    pub attention_mode: AttentionMode,
    pub patience: usize,
    pub seed: u64,
    pub epochs: usize,
    /// Feed ground-truth tags (padded with predictions) as semantic features in training.
    pub use_gt_tags: bool,
    pub init_scale: f64,

    /// Word vocabulary cap, excluding reserved ids.
    pub max_vocab: usize,
    pub tfidf_k: usize,
    pub val_count: usize,
    pub test_count: usize,
}

impl Default for TrainConfig {
    /// Desk-scale dimensions with the published optimisation settings.
    fn default() -> Self {
        TrainConfig {
            feature_dim: 32,
            tag_embed_dim: 32,
            context_dim: 32,
            topic_dim: 32,
            hidden_dim: 32,
            att_hidden_dim: 0,
            stop_hidden_dim: 0,
            mlc_hidden_dim: 32,
            grid: 4,
            conv1_channels: 8,
            conv2_channels: 16,
            num_tags: 1,
            vocab_size: 5,
            top_m: 10,
            lambda_tag: 1.0,
            lambda_sent: 1.0,
            lambda_word: 1.0,
            lambda_reg: 1.0,
            lr_cnn: 1e-5,
            lr_rnn: 5e-4,
            stop_threshold: 0.5,
            s_max: 12,
            t_max: 30,
            attention_mode: AttentionMode::Co,
            patience: 5,
            seed: 0,
            epochs: 50,
            use_gt_tags: false,
            init_scale: 0.08,
            max_vocab: 1000,
            tfidf_k: 5,
            val_count: 500,
            test_count: 500,
        }
    }
}

impl TrainConfig {
    /// Full-size dimensions: 14×14 regions of width 512, 512-wide states and embeddings.
    pub fn full_scale() -> Self {
        TrainConfig {
            feature_dim: 512,
            tag_embed_dim: 512,
            context_dim: 512,
            topic_dim: 512,
            hidden_dim: 512,
            mlc_hidden_dim: 4096,
            grid: 14,
            conv1_channels: 64,
            conv2_channels: 512,
            num_tags: 572,
            vocab_size: 1004,
            ..Default::default()
        }
    }

    /// Tiny dimensions for tests and gradient checks. The wider initialisation
    /// keeps every parameter gradient well above finite-difference noise.
    pub fn toy() -> Self {
        TrainConfig {
            feature_dim: 8,
            tag_embed_dim: 8,
            context_dim: 8,
            topic_dim: 8,
            hidden_dim: 8,
            mlc_hidden_dim: 8,
            grid: 2,
            conv1_channels: 2,
            conv2_channels: 3,
            num_tags: 6,
            vocab_size: 20,
            top_m: 3,
            s_max: 4,
            t_max: 8,
            init_scale: 0.5,
            ..Default::default()
        }
    }

    pub fn num_regions(&self) -> usize {
        self.grid * self.grid
    }

    /// Pixel side length accepted by the convolutional encoder.
    pub fn image_side(&self) -> usize {
        self.grid * 4
    }

    pub fn att_hidden(&self) -> usize {
        if self.att_hidden_dim == 0 {
            self.hidden_dim
        } else {
            self.att_hidden_dim
        }
    }

    pub fn stop_hidden(&self) -> usize {
        if self.stop_hidden_dim == 0 {
            self.hidden_dim
        } else {
            self.stop_hidden_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("tag_embed_dim", self.tag_embed_dim),
            ("context_dim", self.context_dim),
            ("topic_dim", self.topic_dim),
            ("hidden_dim", self.hidden_dim),
            ("mlc_hidden_dim", self.mlc_hidden_dim),
            ("grid", self.grid),
            ("conv1_channels", self.conv1_channels),
            ("conv2_channels", self.conv2_channels),
            ("num_tags", self.num_tags),
            ("top_m", self.top_m),
            ("s_max", self.s_max),
            ("t_max", self.t_max),
            ("max_vocab", self.max_vocab),
            ("tfidf_k", self.tfidf_k),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Domain(format!("{name} must be at least 1")));
            }
        }
        if self.vocab_size <= crate::corpus::RESERVED.len() {
            return Err(Error::Domain("vocab_size must exceed the 4 reserved ids".into()));
        }
        for (name, v) in [
            ("lambda_tag", self.lambda_tag),
            ("lambda_sent", self.lambda_sent),
            ("lambda_word", self.lambda_word),
            ("lambda_reg", self.lambda_reg),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Domain(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.lr_cnn > 0.0 && self.lr_rnn > 0.0) {
            return Err(Error::Domain("learning rates must be positive".into()));
        }
        if !(self.stop_threshold > 0.0 && self.stop_threshold < 1.0) {
            return Err(Error::Domain(format!(
                "stop_threshold must lie in (0, 1), got {}",
                self.stop_threshold
            )));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Parse(format!("invalid value `{v}` for `{key}`")))
        }
        match key {
            "feature_dim" => self.feature_dim = p(key, value)?,
            "tag_embed_dim" => self.tag_embed_dim = p(key, value)?,
            "context_dim" => self.context_dim = p(key, value)?,
            "topic_dim" => self.topic_dim = p(key, value)?,
            "hidden_dim" => self.hidden_dim = p(key, value)?,
            "att_hidden_dim" => self.att_hidden_dim = p(key, value)?,
            "stop_hidden_dim" => self.stop_hidden_dim = p(key, value)?,
            "mlc_hidden_dim" => self.mlc_hidden_dim = p(key, value)?,
            "grid" => self.grid = p(key, value)?,
            "conv1_channels" => self.conv1_channels = p(key, value)?,
            "conv2_channels" => self.conv2_channels = p(key, value)?,
            "num_tags" => self.num_tags = p(key, value)?,
            "vocab_size" => self.vocab_size = p(key, value)?,
            "top_m" => self.top_m = p(key, value)?,
            "lambda_tag" => self.lambda_tag = p(key, value)?,
            "lambda_sent" => self.lambda_sent = p(key, value)?,
            "lambda_word" => self.lambda_word = p(key, value)?,
            "lambda_reg" => self.lambda_reg = p(key, value)?,
            "lr_cnn" => self.lr_cnn = p(key, value)?,
            "lr_rnn" => self.lr_rnn = p(key, value)?,
            "stop_threshold" => self.stop_threshold = p(key, value)?,
            "s_max" => self.s_max = p(key, value)?,
            "t_max" => self.t_max = p(key, value)?,
            "attention_mode" => self.attention_mode = value.parse()?,
            "patience" => self.patience = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "use_gt_tags" => self.use_gt_tags = p(key, value)?,
            "init_scale" => self.init_scale = p(key, value)?,
            "max_vocab" => self.max_vocab = p(key, value)?,
            "tfidf_k" => self.tfidf_k = p(key, value)?,
            "val_count" => self.val_count = p(key, value)?,
            "test_count" => self.test_count = p(key, value)?,
            _ => return Err(Error::Parse(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses config text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serialises every field; `parse(to_text())` reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("feature_dim", self.feature_dim.to_string());
        kv("tag_embed_dim", self.tag_embed_dim.to_string());
        kv("context_dim", self.context_dim.to_string());
        kv("topic_dim", self.topic_dim.to_string());
        kv("hidden_dim", self.hidden_dim.to_string());
        kv("att_hidden_dim", self.att_hidden_dim.to_string());
        kv("stop_hidden_dim", self.stop_hidden_dim.to_string());
        kv("mlc_hidden_dim", self.mlc_hidden_dim.to_string());
        kv("grid", self.grid.to_string());
        kv("conv1_channels", self.conv1_channels.to_string());
        kv("conv2_channels", self.conv2_channels.to_string());
        kv("num_tags", self.num_tags.to_string());
        kv("vocab_size", self.vocab_size.to_string());
        kv("top_m", self.top_m.to_string());
        // `{:?}` on f64 prints the shortest string that round-trips.
        kv("lambda_tag", format!("{:?}", self.lambda_tag));
        kv("lambda_sent", format!("{:?}", self.lambda_sent));
        kv("lambda_word", format!("{:?}", self.lambda_word));
        kv("lambda_reg", format!("{:?}", self.lambda_reg));
        kv("lr_cnn", format!("{:?}", self.lr_cnn));
        kv("lr_rnn", format!("{:?}", self.lr_rnn));
        kv("stop_threshold", format!("{:?}", self.stop_threshold));
        kv("s_max", self.s_max.to_string());
        kv("t_max", self.t_max.to_string());
        kv("attention_mode", self.attention_mode.to_string());
        kv("patience", self.patience.to_string());
        kv("seed", self.seed.to_string());
        kv("epochs", self.epochs.to_string());
        kv("use_gt_tags", self.use_gt_tags.to_string());
        kv("init_scale", format!("{:?}", self.init_scale));
        kv("max_vocab", self.max_vocab.to_string());
        kv("tfidf_k", self.tfidf_k.to_string());
        kv("val_count", self.val_count.to_string());
        kv("test_count", self.test_count.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.lambda_tag, 1.0);
        assert_eq!(c.lambda_sent, 1.0);
        assert_eq!(c.lambda_word, 1.0);
        assert_eq!(c.lambda_reg, 1.0);
        assert_eq!(c.lr_cnn, 1e-5);
        assert_eq!(c.lr_rnn, 5e-4);
        assert_eq!(c.stop_threshold, 0.5);
        assert_eq!(c.top_m, 10);
        assert_eq!(c.max_vocab, 1000);
        assert_eq!(c.tfidf_k, 5);
        let p = TrainConfig::full_scale();
        assert_eq!((p.num_regions(), p.feature_dim), (196, 512));
        assert_eq!(p.hidden_dim, 512);
        assert_eq!(p.num_tags, 572);
    }

    #[test]
    fn text_roundtrip() {
        let mut c = TrainConfig::toy();
        c.lr_rnn = 3.3e-3;
        c.attention_mode = AttentionMode::SemanticOnly;
        c.use_gt_tags = true;
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn parse_rejects_unknown_and_malformed() {
        assert!(TrainConfig::parse("bogus = 1").is_err());
        assert!(TrainConfig::parse("hidden_dim 3").is_err());
        assert!(TrainConfig::parse("hidden_dim = x").is_err());
        assert!(TrainConfig::parse("attention_mode = both").is_err());
        let c = TrainConfig::parse("# comment\n\nhidden_dim = 7 # trailing\n").unwrap();
        assert_eq!(c.hidden_dim, 7);
    }

    #[test]
    fn validate_bounds() {
        let mut c = TrainConfig::toy();
        assert!(c.validate().is_ok());
        c.stop_threshold = 1.0;
        assert!(c.validate().is_err());
        c.stop_threshold = 0.5;
        c.lambda_reg = -1.0;
        assert!(c.validate().is_err());
        c.lambda_reg = 0.0;
        c.lr_cnn = 0.0;
        assert!(c.validate().is_err());
    }
}
