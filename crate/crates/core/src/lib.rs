//! Monte-Carlo tree search over household tasks, extraction of success
//! trajectories and step-level preference pairs from the search tree, and
//! an iterative SFT + DPO loop that trains a featurized softmax policy.

pub mod datasets;
pub mod env;
pub mod eval;
pub mod exec;
pub mod oracle;
pub mod policy;
pub mod search;
pub mod state;
pub mod training;
