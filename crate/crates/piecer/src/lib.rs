//! PIECER: a plug-and-play module that enhances extractive machine reading
//! comprehension with knowledge-graph connection information.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`autodiff`], [`gradcheck`], [`optim`], [`params`], [`rng`]:
//!   a dense f64 tensor engine with reverse-mode gradients, a finite-difference
//!   gradient checker, AdamW, a slanted triangular learning-rate schedule,
//!   parameter EMA, and a portable seeded RNG.
//! - [`kg`]: a ConceptNet-style knowledge graph store with lemma and pair
//!   indexes.
//! - [`kge`]: TransE / DistMult entity-embedding pre-training plus filtered
//!   link-prediction evaluation.
//! - [`text`], [`jointgraph`]: tokenization, rule-based lemmatization, and the
//!   joint query-passage graph (knowledge / coreference / self-loop edges).
//! - [`model`]: the PIECER module itself — knowledge embedding injection,
//!   L-layer K-head Highway GAT reasoning, and the optional self-matching
//!   block.
//! - [`mrc`], [`dataset`], [`synth`], [`metrics`]: a small extractive MRC
//!   model demonstrating the plug contract, synthetic data generation, and
//!   EM/F1 evaluation.
//! - [`checkpoint`]: versioned model serialization.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod gradcheck;
pub mod jointgraph;
pub mod kg;
pub mod kge;
pub mod metrics;
pub mod model;
pub mod mrc;
pub mod optim;
pub mod params;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod text;

pub use autodiff::{ComputeGraph, NeighborMask, NodeId, OpKind};
pub use gradcheck::grad_check;
pub use jointgraph::{EdgeCategory, EdgeMask, JointGraph};
pub use kg::KnowledgeGraph;
pub use kge::{EntityEmbeddingTable, KgeConfig, KgeMethod};
pub use model::{Combiner, PiecerConfig, PiecerModel};
pub use mrc::{MrcConfig, MrcModel, SpanPrediction};
pub use optim::{lr_at, EmaState, OptimizerState};
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::{Tensor, TensorError};
pub use text::{Annotator, Segment, Token};
