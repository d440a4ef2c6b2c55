//! Instruction-level collection.
//!
//! [`Collector`] is an interpreter hook. Each bytecode invocation yields one
//! [`CollectionTree`]; trees of the same method are deduplicated into a
//! [`MethodTrace`]. Alongside the trees the collector captures, on first use,
//! every pool entry the executed code touches ([`MetadataCapture`]), and the
//! runtime targets of reflective calls ([`ReflectionRecord`]).

pub mod collector;
pub mod dump;
pub mod metadata;
pub mod tree;

pub use collector::{collect_run, Collector, Traces, DEFAULT_REFLECTION_DEPTH};
pub use dump::{read_dump, text_dump, write_dump, DumpError};
pub use metadata::{DanglingIndex, MetadataCapture};
pub use tree::{dedup_trees, CollectionTree, IlEntry, MethodTrace, NodeId, ReflectionRecord, TreeBuilder, TreeNode};
