//! Reverse-mode differentiation.
//!
//! [`tape`] is a small matrix-valued engine that powers both training and
//! the attention-gradient queries in [`attention`].

mod attention;
mod tape;

pub use attention::{attention_gradients, finite_diff_oracle, objective_value, AttentionGradients, GradTarget};
pub use tape::{sigmoid, softmax_in_place, Gradients, NodeId, Tape};
