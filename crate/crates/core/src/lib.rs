//! Medical imaging report generation from scratch: a multi-label tag
//! classifier over image regions, co-attention over visual and semantic
//! features, and a hierarchical sentence/word LSTM decoder trained with a
//! joint loss on a small reverse-mode autodiff tape.

pub mod cli;
pub mod coattention;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod training;

pub use coattention::AttentionRecord;
pub use config::AttentionMode;
pub use config::TrainConfig;
pub use decoder::{generate_report, GenerateOptions, Report};
pub use encoder::{encode, EncoderOutput, ImageInput};
pub use error::{Error, Result};
pub use params::{gradient_check, ParameterStore};
pub use rng::Rng;
pub use tape::{value_and_grad, GradientMap, Tape, Var};
pub use tensor::Tensor;
pub use training::{train, Checkpoint, Example, TrainOutcome};
