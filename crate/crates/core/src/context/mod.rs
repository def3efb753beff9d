//! Contextual clustering of training samples and the selector that picks an
//! expert auto-encoder for a new target.
//!
//! Cluster and class indices are 0-based throughout the library.

mod checkpoint;
mod cluster;
mod selector;

pub use checkpoint::{load_context, read_context, save_context, write_context, ContextModel, CTXM_MAGIC, CTXM_VERSION};
pub use cluster::{
    adjusted_rand_index, farthest_init, farthest_init_indices, make_descriptor, two_step_cluster, ClusterModel,
    Descriptor, DEFAULT_INIT_TRIALS, MAX_LLOYD_ITERATIONS,
};
pub use selector::{
    accuracy, cross_entropy_grad, select, softmax, train_selector, SelectorConfig, SelectorGrads, SelectorNetwork,
    SELECTOR_HIDDEN,
};
