//! Per-invocation recording of a run, alongside the collector.

use std::collections::{BTreeMap, BTreeSet};

use mdx_collect::{CollectionTree, Collector, NodeId, Traces, TreeBuilder, DEFAULT_REFLECTION_DEPTH};
use mdx_core::{CodeUnit, Container, Instruction, StaticFieldTable, Value};
use mdx_vm::{run_program, CallDisposition, Config, Hooks, Mode, NativeRegistry, Run};

/// Forwards every callback to both hooks. The first `Stub` wins.
pub struct Tee<'a>(pub &'a mut dyn Hooks, pub &'a mut dyn Hooks);

impl Hooks for Tee<'_> {
    fn on_enter(&mut self, c: &Container, method: u32, args: &[Value], statics: &StaticFieldTable) {
        self.0.on_enter(c, method, args, statics);
        self.1.on_enter(c, method, args, statics);
    }

    fn on_instruction(&mut self, c: &Container, method: u32, pc: usize, units: &[CodeUnit], insn: &Instruction) {
        self.0.on_instruction(c, method, pc, units, insn);
        self.1.on_instruction(c, method, pc, units, insn);
    }

    fn on_exit(&mut self, c: &Container, method: u32, result: Option<Value>) {
        self.0.on_exit(c, method, result);
        self.1.on_exit(c, method, result);
    }

    fn on_reflective(&mut self, c: &Container, method: u32, pc: usize, target: u32, depth: u32) {
        self.0.on_reflective(c, method, pc, target, depth);
        self.1.on_reflective(c, method, pc, target, depth);
    }

    fn on_call(&mut self, c: &Container, caller: u32, pc: usize, callee: u32, args: &[Value]) -> CallDisposition {
        let a = self.0.on_call(c, caller, pc, callee, args);
        let b = self.1.on_call(c, caller, pc, callee, args);
        if a != CallDisposition::Proceed {
            a
        } else {
            b
        }
    }

    fn on_result(
        &mut self,
        c: &Container,
        caller: u32,
        callee: u32,
        result: Option<Value>,
        statics: &StaticFieldTable,
    ) {
        self.0.on_result(c, caller, callee, result, statics);
        self.1.on_result(c, caller, callee, result, statics);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub pc: usize,
    pub units: Vec<CodeUnit>,
    pub insn: Instruction,
}

/// One bytecode invocation as it ran.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub method: u32,
    pub args: Vec<Value>,
    pub statics: StaticFieldTable,
    pub steps: Vec<Step>,
    /// Every call made by this frame with the result it produced and the
    /// static table right after it.
    pub results: Vec<(u32, Option<Value>, StaticFieldTable)>,
    pub tree: CollectionTree,
    /// Why a fixed assignment of instrument fields cannot reproduce this
    /// invocation, if it cannot.
    pub inconsistency: Option<String>,
}

struct Active {
    method: u32,
    args: Vec<Value>,
    statics: StaticFieldTable,
    steps: Vec<Step>,
    results: Vec<(u32, Option<Value>, StaticFieldTable)>,
    builder: TreeBuilder,
    /// (node before, node after, pc) for each step.
    walk: Vec<(NodeId, NodeId, usize)>,
    sites: BTreeMap<usize, BTreeSet<u32>>,
}

#[derive(Default)]
pub struct Recorder {
    active: Vec<Active>,
    pub done: Vec<Invocation>,
}

impl Hooks for Recorder {
    fn on_enter(&mut self, _c: &Container, method: u32, args: &[Value], statics: &StaticFieldTable) {
        self.active.push(Active {
            method,
            args: args.to_vec(),
            statics: statics.clone(),
            steps: Vec::new(),
            results: Vec::new(),
            builder: TreeBuilder::new(method),
            walk: Vec::new(),
            sites: BTreeMap::new(),
        });
    }

    fn on_instruction(&mut self, _c: &Container, _method: u32, pc: usize, units: &[CodeUnit], insn: &Instruction) {
        let Some(a) = self.active.last_mut() else { return };
        let before = a.builder.current();
        a.builder.on_instruction(pc, units, insn);
        a.walk.push((before, a.builder.current(), pc));
        a.steps.push(Step { pc, units: units.to_vec(), insn: insn.clone() });
    }

    fn on_exit(&mut self, _c: &Container, _method: u32, _result: Option<Value>) {
        if let Some(a) = self.active.pop() {
            self.done.push(finish(a));
        }
    }

    fn on_reflective(&mut self, _c: &Container, method: u32, pc: usize, target: u32, depth: u32) {
        let Some(a) = self.active.last_mut() else { return };
        if depth <= DEFAULT_REFLECTION_DEPTH {
            a.builder.record_reflection(mdx_collect::ReflectionRecord { method, pc, target, depth });
            a.sites.entry(pc).or_default().insert(target);
        }
    }

    fn on_result(
        &mut self,
        _c: &Container,
        _caller: u32,
        callee: u32,
        result: Option<Value>,
        statics: &StaticFieldTable,
    ) {
        if let Some(a) = self.active.last_mut() {
            a.results.push((callee, result, statics.clone()));
        }
    }
}

/// A static field per divergence can only replay a walk that makes the same
/// choice every time it passes a divergence point, and whose convergences
/// agree with the final tree's index maps.
fn consistency(a: &Active) -> Option<String> {
    let tree = a.builder.tree();
    let mut choice: BTreeMap<(NodeId, usize), Option<NodeId>> = BTreeMap::new();
    let mut note = |key: (NodeId, usize), c: Option<NodeId>| -> Option<String> {
        match choice.insert(key, c) {
            Some(old) if old != c => Some(format!("node {} pc {:#x} takes {:?} and later {:?}", key.0, key.1, old, c)),
            _ => None,
        }
    };
    for &(before, after, pc) in &a.walk {
        let r = if after == before {
            note((before, pc), None)
        } else if tree.nodes[after].parent == Some(before) {
            note((before, pc), Some(after)).or_else(|| note((after, pc), None))
        } else {
            if tree.nodes[before].iim.contains_key(&pc) {
                return Some(format!("node {before} converges at pc {pc:#x}, which it records later itself"));
            }
            note((after, pc), None)
        };
        if r.is_some() {
            return r;
        }
    }
    a.sites
        .iter()
        .find(|(_, t)| t.len() > 1)
        .map(|(pc, t)| format!("reflective site {pc:#x} resolves to {} targets", t.len()))
}

fn finish(a: Active) -> Invocation {
    let inconsistency = consistency(&a);
    Invocation {
        method: a.method,
        args: a.args,
        statics: a.statics,
        steps: a.steps,
        results: a.results,
        tree: a.builder.finish(),
        inconsistency,
    }
}

/// A plain run with both the collector and the recorder attached.
pub struct Recording {
    pub run: Run,
    pub traces: Traces,
    pub invocations: Vec<Invocation>,
}

impl Recording {
    /// Index of the unique tree an invocation produced.
    pub fn tree_index(&self, inv: &Invocation) -> Option<usize> {
        self.traces.methods.get(&inv.method)?.trees.iter().position(|t| t.same_structure(&inv.tree))
    }

    pub fn invocations_of(&self, method: u32, tree: usize) -> impl Iterator<Item = &Invocation> {
        self.invocations.iter().filter(move |i| i.method == method && self.tree_index(i) == Some(tree))
    }
}

pub fn record(container: &Container, natives: &NativeRegistry, inputs: &[Value], mode: Mode) -> Recording {
    let mut collector = Collector::default();
    let mut recorder = Recorder::default();
    let run = {
        let mut tee = Tee(&mut collector, &mut recorder);
        run_program(container, natives, inputs, mode, Config::default(), Some(&mut tee))
    };
    let traces =
        collector.into_traces(container.entry, inputs).expect("collected indices resolve in the source container");
    Recording { run, traces, invocations: recorder.done }
}
