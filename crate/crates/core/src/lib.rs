//! Generator and evaluation kit for a synthetic grid-world sentence verification benchmark.
//!
//! A scene is a set of coloured shapes on a 6×6 grid, presented as an image,
//! a caption, or both. Each example pairs a scene with a true/false query from
//! one of four tasks (spatial relations, cardinality, quantifiers, numerical
//! comparison). Train and out-of-distribution test sets are separated by the
//! task-relevant pair of quantities, and prediction files are scored with
//! macro-F1 plus per-pair error breakdowns.

pub mod dataset;
pub mod evalkit;
pub mod render;
pub mod rng;
pub mod scene;
pub mod semantics;
pub mod splitter;
pub mod textgen;

pub use dataset::{DatasetSpec, ExampleRecord, ModalityView, SplitName};
pub use evalkit::{PredictionSet, RunSummary};
pub use render::RenderConfig;
pub use scene::{Attribute, Colour, GridPos, ObjectSpec, Scene, Shape};
pub use semantics::{eval, pair_key, PairKey, Query, Scope, Task};
pub use splitter::{LabeledExample, PairPartition, SamplerConfig, Side, TaskPartition};
