use std::collections::BTreeMap;

use mdx_core::{CodeUnit, Container, Instruction, StaticFieldTable, Value};
use mdx_vm::{run_program, Config, Hooks, Mode, NativeRegistry, Run};

use crate::metadata::{DanglingIndex, MetadataCapture};
use crate::tree::{CollectionTree, MethodTrace, ReflectionRecord, TreeBuilder};

pub const DEFAULT_REFLECTION_DEPTH: u32 = 4;

/// Everything collected from one or more runs of a program: the unique trees
/// of every executed bytecode method plus the metadata they reference.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Traces {
    pub entry: u32,
    pub inputs: Vec<Value>,
    pub methods: BTreeMap<u32, MethodTrace>,
    pub meta: MetadataCapture,
}

impl Traces {
    pub fn add_tree(&mut self, tree: CollectionTree) {
        self.methods.entry(tree.method).or_insert_with(|| MethodTrace::new(tree.method)).add(tree);
    }

    /// Folds `other` in; trees already present are deduplicated.
    pub fn merge(&mut self, other: Traces) {
        if self.methods.is_empty() && self.meta.is_empty() {
            self.entry = other.entry;
            self.inputs = other.inputs.clone();
        }
        self.meta.merge(&other.meta);
        for (_, trace) in other.methods {
            for t in trace.trees {
                self.add_tree(t);
            }
        }
    }

    pub fn tree_count(&self) -> usize {
        self.methods.values().map(|m| m.trees.len()).sum()
    }

    pub fn all_trees(&self) -> impl Iterator<Item = &CollectionTree> {
        self.methods.values().flat_map(|m| m.trees.iter())
    }
}

/// Execution hook that builds one tree per bytecode invocation and captures
/// the metadata each instruction touches.
#[derive(Debug)]
pub struct Collector {
    active: Vec<(u64, TreeBuilder)>,
    finished: Vec<(u64, CollectionTree)>,
    next_invocation: u64,
    meta: MetadataCapture,
    max_depth: u32,
    error: Option<DanglingIndex>,
}

impl Default for Collector {
    fn default() -> Self {
        Self::new(DEFAULT_REFLECTION_DEPTH)
    }
}

impl Collector {
    pub fn new(max_reflection_depth: u32) -> Self {
        Collector {
            active: Vec::new(),
            finished: Vec::new(),
            next_invocation: 0,
            meta: MetadataCapture::default(),
            max_depth: max_reflection_depth,
            error: None,
        }
    }

    fn note(&mut self, r: Result<(), DanglingIndex>) {
        if let Err(e) = r {
            self.error.get_or_insert(e);
        }
    }

    fn capture_method_and_class(&mut self, c: &Container, m: u32) {
        let r = self.meta.method(c, m);
        self.note(r);
        if let Some(def) = c.methods.get(m as usize) {
            let r = self.meta.class_of_type(c, def.class);
            self.note(r);
        }
    }

    /// Trees in invocation order. Invocations still open (the run faulted)
    /// are closed as if they had returned.
    pub fn finish(mut self) -> Result<(Vec<CollectionTree>, MetadataCapture), DanglingIndex> {
        while let Some((inv, b)) = self.active.pop() {
            self.finished.push((inv, b.finish()));
        }
        if let Some(e) = self.error {
            return Err(e);
        }
        self.finished.sort_by_key(|(inv, _)| *inv);
        Ok((self.finished.into_iter().map(|(_, t)| t).collect(), self.meta))
    }

    pub fn into_traces(self, entry: u32, inputs: &[Value]) -> Result<Traces, DanglingIndex> {
        let (trees, meta) = self.finish()?;
        let mut traces = Traces { entry, inputs: inputs.to_vec(), methods: BTreeMap::new(), meta };
        for t in trees {
            traces.add_tree(t);
        }
        Ok(traces)
    }
}

impl Hooks for Collector {
    fn on_enter(&mut self, c: &Container, method: u32, _args: &[Value], _statics: &StaticFieldTable) {
        if self.meta.entry.is_none() {
            self.meta.entry = Some(method);
        }
        self.capture_method_and_class(c, method);
        let inv = self.next_invocation;
        self.next_invocation += 1;
        self.active.push((inv, TreeBuilder::new(method)));
    }

    fn on_instruction(&mut self, c: &Container, _method: u32, pc: usize, units: &[CodeUnit], insn: &Instruction) {
        match insn {
            Instruction::ConstString { string, .. } => {
                let r = self.meta.string(c, *string as u32);
                self.note(r);
            }
            Instruction::SGet { field, .. } | Instruction::SPut { field, .. } => {
                let r = self.meta.field(c, *field as u32);
                self.note(r);
                if let Some(f) = c.fields.get(*field as usize) {
                    let r = self.meta.class_of_type(c, f.class);
                    self.note(r);
                }
            }
            Instruction::Invoke { method, .. } => self.capture_method_and_class(c, *method as u32),
            _ => {}
        }
        if let Some((_, b)) = self.active.last_mut() {
            b.on_instruction(pc, units, insn);
        }
    }

    fn on_exit(&mut self, _c: &Container, _method: u32, _result: Option<Value>) {
        if let Some((inv, b)) = self.active.pop() {
            self.finished.push((inv, b.finish()));
        }
    }

    fn on_reflective(&mut self, c: &Container, method: u32, pc: usize, target: u32, depth: u32) {
        self.capture_method_and_class(c, target);
        if depth > self.max_depth {
            return;
        }
        if let Some((_, b)) = self.active.last_mut() {
            b.record_reflection(ReflectionRecord { method, pc, target, depth });
        }
    }
}

/// Runs the program with a collector attached.
pub fn collect_run(
    container: &Container,
    natives: &NativeRegistry,
    inputs: &[Value],
    mode: Mode,
    config: Config,
) -> (Run, Result<Traces, DanglingIndex>) {
    let mut collector = Collector::default();
    let run = run_program(container, natives, inputs, mode, config, Some(&mut collector));
    let traces = collector.into_traces(container.entry, inputs);
    (run, traces)
}
