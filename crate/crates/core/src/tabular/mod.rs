//! Tabular data model, subset samplers, missingness protocols and
//! attribute-importance ranking.

pub mod importance;
pub mod io;
pub mod missingness;
pub mod sampling;
pub mod schema;

pub use importance::{rank_importance, ForestConfig, ImportanceRanking, ImportanceTask};
pub use missingness::{apply_missingness, kept_count, MissingnessProtocol, ProtocolKind};
pub use sampling::{marginal_corrupt, sample_nested_pair, sample_subset, Marginals};
pub use schema::{AttributeSchema, Column, ColumnKind, TabularSample, Value};
