//! Joint multiple intent detection and slot filling with a non-autoregressive
//! global-local graph interaction decoder (GL-GIN).
//!
//! The crate is organized around the stages of the model:
//!
//! * [`corpus`] — dataset loading, vocabularies, padded batches
//! * [`autodiff`] — reverse-mode tape over `ndarray`, generic over `f32`/`f64`
//! * [`nn`] — parameter store, initializers, mask-gated (Bi)LSTM
//! * [`encoder`] — shared self-attentive BiLSTM encoder
//! * [`intent_decoder`] — token-level multi-label intent scores and voting
//! * [`graph`] — multi-head graph attention kernel
//! * [`slot_decoder`] — non-autoregressive slot decoding (local + global
//!   graph interaction) and an autoregressive baseline for latency comparison
//! * [`model`] — end-to-end wiring and greedy prediction
//! * [`training`] — joint loss, Adam, early stopping, checkpointing
//! * [`evaluation`] — span F1 / intent / overall accuracy and the decode
//!   latency benchmark
//! * [`synth`] — deterministic synthetic corpus generator for tests and demos

pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod evaluation;
pub mod graph;
pub mod intent_decoder;
pub mod model;
pub mod nn;
pub mod slot_decoder;
pub mod synth;
pub mod training;

pub use corpus::{Batch, LabeledExample, Vocabularies};
// re-exports of model and training land once those modules exist
// pub use model::GlGin;
// pub use training::TrainConfig;
