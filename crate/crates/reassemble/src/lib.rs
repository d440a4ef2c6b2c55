//! Offline reassembly of collected trees into one container.
//!
//! Each unique tree of a method is flattened into a body where every
//! divergence becomes a branch on a static field of the instrument class
//! `Lmdx/Modification;`. Methods with several unique trees get one
//! `<name>_variant_<i>` method per tree behind a dispatcher that keeps the
//! original name. Reflective call sites with recorded targets call
//! `reveal_*` proxies instead. Pools are rebuilt from the captured metadata
//! only, so code that never ran is absent; captured but unexecuted bytecode
//! methods survive as stubs.

mod build;
mod flatten;
mod lift;
pub mod plan;
mod variants;

use std::collections::BTreeMap;

use mdx_collect::{DanglingIndex, Traces};
use mdx_core::{listing, AsmError, Container, ContainerError, Section};
use thiserror::Error;

pub use plan::{
    FieldId, FieldPurpose, FieldRef, InstrumentField, InstrumentPlan, Item, MethodRef, Origin, SymBody, SymInsn,
    INSTRUMENT_CLASS, PROXY_PREFIX, SEED_PREFIX,
};
pub use variants::VariantSet;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReassembleError {
    #[error(transparent)]
    Dangling(#[from] DanglingIndex),
    #[error("method {method}: {detail}")]
    InvariantViolation { method: u32, detail: String },
    #[error("method {method} uses {registers} registers, leaving none for synthetic branches")]
    ScratchRegisterUnavailable { method: u32, registers: u16 },
    #[error("method {method} pc {pc}: target {target} takes {expected} arguments, call site passes {given}")]
    ArityMismatch { method: u32, pc: usize, target: u32, expected: usize, given: usize },
    #[error("{section} index {index} does not fit a 16-bit operand")]
    IndexOverflow { section: Section, index: u32 },
    #[error("method {method} has {count} parameters; dispatchers forward at most 4")]
    TooManyParameters { method: u32, count: usize },
    #[error("method {method}: {source}")]
    Assemble { method: u32, source: AsmError },
    #[error("emitted container is invalid: {0}")]
    Container(#[from] ContainerError),
}

/// Emitted method and the origin of every instruction start in it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantLayout {
    pub method: u32,
    pub origins: BTreeMap<usize, Origin>,
}

impl VariantLayout {
    /// Instruction starts not listed are synthetic (widened branch tails).
    pub fn origin(&self, pc: usize) -> Option<Origin> {
        self.origins.get(&pc).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodLayout {
    /// Emitted index carrying the original name.
    pub method: u32,
    pub dispatcher: Option<VariantLayout>,
    /// One per unique tree, in trace order.
    pub variants: Vec<VariantLayout>,
}

#[derive(Debug, Clone)]
pub struct Reassembled {
    pub container: Container,
    pub plan: InstrumentPlan,
    /// Keyed by original method index.
    pub methods: BTreeMap<u32, MethodLayout>,
    /// Original method index to emitted index.
    pub method_map: BTreeMap<u32, u32>,
    /// Original target index to emitted proxy index.
    pub proxies: BTreeMap<u32, u32>,
}

impl Reassembled {
    /// Original method an emitted index stands for, looking through proxies
    /// and variants.
    pub fn original_of(&self, emitted: u32) -> Option<u32> {
        if let Some((o, _)) = self.method_map.iter().find(|(_, n)| **n == emitted) {
            return Some(*o);
        }
        if let Some((t, _)) = self.proxies.iter().find(|(_, p)| **p == emitted) {
            return Some(*t);
        }
        self.methods
            .iter()
            .find(|(_, l)| l.dispatcher.is_some() && l.variants.iter().any(|v| v.method == emitted))
            .map(|(o, _)| *o)
    }

    pub fn listing(&self) -> String {
        listing::container_listing(&self.container)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReassembleOptions {
    /// Seed for the instrument fields' initial values.
    pub seed: u64,
}

/// Flattens, lifts and merges every traced method, then rebuilds the pools.
pub fn reassemble(traces: &Traces, opts: ReassembleOptions) -> Result<Reassembled, ReassembleError> {
    let mut plan = InstrumentPlan::new(opts.seed);
    let mut sets = Vec::with_capacity(traces.methods.len());
    for (m, trace) in &traces.methods {
        let def = traces.meta.methods.get(m).ok_or(DanglingIndex { section: Section::Methods, index: *m })?;
        let class_ty =
            traces.meta.types.get(&def.class).ok_or(DanglingIndex { section: Section::Types, index: def.class })?;
        let class =
            traces.meta.strings.get(class_ty).ok_or(DanglingIndex { section: Section::Strings, index: *class_ty })?;
        let name =
            traces.meta.strings.get(&def.name).ok_or(DanglingIndex { section: Section::Strings, index: def.name })?;
        let names = flatten::Names { class, method: name };
        sets.push(variants::merge_variants(trace, &traces.meta, &names, &mut plan)?);
    }
    build::build(traces, sets, plan)
}
