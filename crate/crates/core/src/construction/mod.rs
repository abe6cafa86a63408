//! The construction pipeline: allocator, rooted subtree contexts, the
//! rootless chain and the assembled model.

pub mod allocator;
pub mod context;
pub mod model;
pub mod rootless;
