//! Self-improving language-action data engine.
//!
//! The crate ties together three policies over pick-and-place tasks:
//! instruction → action (L2A), action → description (A2L) and
//! description-pair consistency (L2C). Chaining L2A and A2L on a model's own
//! output yields candidate training triplets; [`cycle_engine::augment`]
//! keeps the ones a confidence gate and a majority vote over L2C judgments
//! agree on.
//!
//! Observations are symbolic [`scene::Scene`]s, so every step can be checked
//! against ground truth ([`semantics_eval`]) and the built-in
//! [`backends::OracleBackend`] can stand in for a trained model.

pub mod backends;
pub mod cycle_engine;
pub mod datagen;
pub mod lang_parser;
pub mod scene;
pub mod seed;
pub mod semantics_eval;
pub mod spatial_lang;

pub use backends::{Backend, BackendError, BackendExt, OracleBackend, OracleNoise, RemoteBackend};
pub use datagen::{Catalog, Demonstration, Provenance};
pub use lang_parser::{intents_equivalent, parse, ParseError, ParseErrorKind, Parser};
pub use scene::{Action, Direction8, GridCell, Point2, Scene, SceneObject};
pub use semantics_eval::{EvalConfig, MetricsReport};
pub use spatial_lang::{Intent, PlacementSpec, TemplateBank, ThresholdConfig};
