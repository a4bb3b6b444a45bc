//! Joint top-N recommendation and knowledge-graph completion with
//! translation-based embeddings.
//!
//! Items aligned to graph entities share their entity vector, and each
//! latent user preference is paired with one relation, so the two tasks
//! train a common set of embedding tables.

pub mod corpus;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod explain;
pub mod grad;
pub mod kgc;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod rec;
pub mod sampler;
pub mod synthetic;
pub mod trainer;

pub use corpus::{AlignmentMap, InteractionSet, RelationCategory, Role, Triple, TripleSet, Vocab};
pub use dataset::Dataset;
pub use embedding::{EmbeddingSpace, Shape, Table};
pub use error::{Error, ErrorKind, Result};
pub use model::{Counts, ModelKind};
pub use trainer::{fit, TrainConfig};
