//! Constraint-selection experiments for narrative planning with language
//! models, and the statistics used to analyse them.

pub mod condition;
pub mod harness;
pub mod library;
pub mod manifest;
pub mod network;
pub mod par;
pub mod permutation;
pub mod reasoning;
pub mod report;
pub mod stats;
pub mod synthetic;

pub use condition::{Budget, TaskCondition};
pub use library::{
    load_library, subset_for_condition, validate_pool, CandidateList, Category, Constraint,
    ConstraintPool, Element, ListScope,
};
