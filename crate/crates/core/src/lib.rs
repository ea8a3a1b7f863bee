//! Decision tree embedding by leaf means.
//!
//! A CART tree partitions the input space; the training mean of each leaf
//! becomes an anchor point and every input is mapped affinely onto its
//! affinities with those anchors. The embedding is classified with
//! pseudoinverse linear discriminant analysis. The [`oracle`] module checks
//! the population-level properties of the map on exactly enumerable
//! discrete distributions.

pub mod data;
pub mod embed;
pub mod error;
pub mod lda;
pub mod linalg;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod tree;

pub use data::{load_csv, read_csv, read_features, BootstrapSample, Dataset, FoldPlan, LabelColumn, Schema};
pub use embed::{AnchorMap, Embedding, InterceptConvention};
pub use error::{DteError, Result};
pub use lda::LdaModel;
pub use pipeline::{CvReport, DteClassifier, DteParams, Method};
pub use tree::{DecisionTree, TreeConfig};
