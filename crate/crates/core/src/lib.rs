//! Pruning of candidate label assignments ("pre-images") for weakly
//! supervised neurosymbolic learning.
//!
//! Each training sample carries a symbolic constraint over the labels of its
//! instances. [`abduction`] enumerates the label assignments satisfying it,
//! [`proximity`] links instances that lie close in an embedding space,
//! [`consistency`] finds the assignments that contradict those links, and
//! [`pruner`] selects, exactly, the set of links that discards the most
//! assignments while leaving every sample at least one. [`trainer`] runs the
//! whole loop with a small classifier trained under semantic loss, and
//! [`report`] aggregates run metrics.

pub mod abduction;
pub mod consistency;
pub mod dataset;
pub mod error;
pub mod proximity;
pub mod pruner;
pub mod report;
pub mod trainer;

pub use abduction::{abduce, Abduced, Constraint, Theory};
pub use dataset::{load_dataset, save_dataset, Dataset, LabelSpace, NesySample, PreImage};
pub use error::{Error, Result};
pub use proximity::{candidate_edges, EdgeRule, EmbeddingTable, Metric};
pub use pruner::{apply_pruning, build_ilp, prune_batch, solve_exact, Coupling, PruneSolution, PruneStats};
