//! Multilingual sentiment lexicons, lexicon-informed pretraining and
//! evaluation utilities.
//!
//! Modules are generic over the scalar type; the aliases below fix it to `f64`.

pub mod encoder;
pub mod eval;
pub mod extend;
pub mod filter;
pub mod lexicon;
pub mod prompt;
pub mod scalar;
pub mod train;

pub use scalar::Scalar;

pub type Lexicon = lexicon::ValenceLexicon<f64>;
pub type Entry = lexicon::LexiconEntry<f64>;
pub type Encoder = encoder::ReferenceEncoder<f64>;
pub type TrainConfig = encoder::TrainConfig<f64>;
pub type FilterConfig = filter::FilterConfig<f64>;
pub type FilterOutcome = filter::FilterOutcome<f64>;
pub type EncoderCheckpoint = train::Checkpoint<f64, encoder::ReferenceEncoder<f64>>;
