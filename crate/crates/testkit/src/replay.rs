//! Replay oracle for reassembled containers.
//!
//! Every unique tree of a method is replayed in the reassembled container
//! once per assignment of the instrument fields that belong to it, with the
//! arguments and static state of an invocation that produced it, every call
//! stubbed with the results that invocation observed, and tampering
//! therefore impossible. Two checks run on the replays:
//!
//! * conformance, for every assignment: the replayed instructions form a
//!   walk of the tree where every divergence point takes the child whose
//!   field is set and every reflective site calls the target its fields
//!   select;
//! * literal replay, for every invocation that passed each divergence point
//!   the same way each time: some assignment reproduces the recorded
//!   `(pc, units)` sequence and call sequence exactly.

use std::collections::{BTreeMap, VecDeque};

use mdx_collect::{CollectionTree, NodeId};
use mdx_core::{decode_body, Container, Instruction, MethodKind, StaticFieldTable, Value};
use mdx_reassemble::{FieldPurpose, Origin, Reassembled, VariantLayout};
use mdx_vm::{CallDisposition, Config, Hooks, Interpreter, NativeBehavior, NativeRegistry, RuntimeError};

use crate::record::{Invocation, Recording};

pub const REPLAY_STEP_BUDGET: u64 = 50_000;

/// Registry answering every native of `c` with no result. Replays stub all
/// calls, but the interpreter refuses to start with unresolved natives.
pub fn pure_registry(c: &Container) -> NativeRegistry {
    let mut reg = NativeRegistry::new();
    for (i, m) in c.methods.iter().enumerate() {
        if m.kind == MethodKind::Native {
            reg.insert(c.method_key(i as u32), NativeBehavior::Pure);
        }
    }
    reg
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayReport {
    pub trees: usize,
    /// Replays run, one per tree and assignment.
    pub runs: usize,
    pub literal_checked: usize,
    pub literal_passed: usize,
    /// Invocations a fixed assignment cannot reproduce, with the reason.
    pub inconsistent: Vec<String>,
    /// Trees with more instrument fields than the brute-force limit.
    pub too_many_fields: usize,
    pub failures: Vec<String>,
}

impl ReplayReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.literal_checked == self.literal_passed
    }

    pub fn absorb(&mut self, other: ReplayReport) {
        self.trees += other.trees;
        self.runs += other.runs;
        self.literal_checked += other.literal_checked;
        self.literal_passed += other.literal_passed;
        self.inconsistent.extend(other.inconsistent);
        self.too_many_fields += other.too_many_fields;
        self.failures.extend(other.failures);
    }
}

/// Moves values from the source container's pools into the reassembled one.
struct Remap<'a> {
    from: &'a Container,
    to: &'a Container,
}

impl Remap<'_> {
    fn value(&self, v: Value) -> Value {
        match v {
            Value::Str(s) => Value::Str(self.to.find_string(self.from.string(s)).unwrap_or(u32::MAX)),
            Value::Obj { class, id } => {
                let desc = self.from.type_descriptor(self.from.classes[class as usize].ty);
                Value::Obj { class: self.to.find_class(desc).unwrap_or(u32::MAX), id }
            }
            other => other,
        }
    }

    fn field(&self, f: u32) -> Option<u32> {
        let def = &self.from.fields[f as usize];
        self.to.find_field(self.from.type_descriptor(def.class), self.from.string(def.name))
    }
}

/// An executed IL entry of the replay and the call it made, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Visit {
    node: NodeId,
    pc: usize,
    callee: Option<u32>,
}

struct ReplayHooks<'a> {
    r: &'a Reassembled,
    main: u32,
    layout: &'a VariantLayout,
    dispatching: bool,
    stubs: BTreeMap<u32, VecDeque<(Option<Value>, &'a StaticFieldTable)>>,
    last: BTreeMap<u32, Option<Value>>,
    remap: &'a Remap<'a>,
    visits: Vec<Visit>,
    callees: Vec<u32>,
}

impl Hooks for ReplayHooks<'_> {
    fn on_instruction(&mut self, _c: &Container, method: u32, pc: usize, _u: &[mdx_core::CodeUnit], _i: &Instruction) {
        if method != self.layout.method {
            return;
        }
        if let Some(Origin::Il { node, pc }) = self.layout.origin(pc) {
            self.visits.push(Visit { node, pc, callee: None });
        }
    }

    fn on_call(&mut self, c: &Container, caller: u32, _pc: usize, callee: u32, _args: &[Value]) -> CallDisposition {
        if self.dispatching && caller == self.main && callee == self.layout.method {
            return CallDisposition::Proceed;
        }
        let orig = self.r.original_of(callee).unwrap_or(u32::MAX);
        self.callees.push(orig);
        if let Some(v) = self.visits.last_mut() {
            v.callee = Some(orig);
        }
        let (result, after) = match self.stubs.get_mut(&orig).and_then(VecDeque::pop_front) {
            Some((v, after)) => (v, Some(after)),
            None => match self.last.get(&orig) {
                Some(v) => (*v, None),
                None if c.returns_void(callee) => (None, None),
                None => (Some(Value::Int(0)), None),
            },
        };
        self.last.insert(orig, result);
        let result = result.map(|v| self.remap.value(v));
        // A stubbed callee still has to leave its static stores behind.
        let writes = after
            .into_iter()
            .flat_map(|t| t.iter())
            .filter_map(|(f, v)| Some((self.remap.field(f)?, self.remap.value(v))))
            .collect();
        CallDisposition::StubWithWrites { result, writes }
    }
}

struct Replayed {
    visits: Vec<Visit>,
    callees: Vec<u32>,
    outcome: Result<Option<Value>, RuntimeError>,
}

struct Target<'a> {
    method: u32,
    tree_index: usize,
    tree: &'a CollectionTree,
    layout: &'a VariantLayout,
    main: u32,
    dispatching: bool,
}

fn replay(
    r: &Reassembled,
    reg: &NativeRegistry,
    remap: &Remap<'_>,
    t: &Target<'_>,
    inv: &Invocation,
    fields: &[(u32, bool)],
) -> Replayed {
    let mut stubs: BTreeMap<u32, VecDeque<(Option<Value>, &StaticFieldTable)>> = BTreeMap::new();
    for (callee, v, after) in &inv.results {
        stubs.entry(*callee).or_default().push_back((*v, after));
    }
    let mut hooks = ReplayHooks {
        r,
        main: t.main,
        layout: t.layout,
        dispatching: t.dispatching,
        stubs,
        last: BTreeMap::new(),
        remap,
        visits: Vec::new(),
        callees: Vec::new(),
    };
    let config = Config { step_budget: REPLAY_STEP_BUDGET, seed: 0 };
    let outcome = {
        let mut interp = Interpreter::new(r.container.clone(), reg, config).with_hooks(&mut hooks);
        for (f, v) in inv.statics.iter() {
            if let Some(nf) = remap.field(f) {
                interp.statics_mut().set(nf, remap.value(v));
            }
        }
        for (f, on) in fields {
            interp.statics_mut().set(*f, Value::Int(*on as i32));
        }
        let args: Vec<Value> = inv.args.iter().map(|v| remap.value(*v)).collect();
        interp.execute_method(t.main, &args)
    };
    Replayed { visits: hooks.visits, callees: hooks.callees, outcome }
}

/// The position control reaches when it arrives at `(n, pc)`: synthetic
/// branches in front of it enter the first child whose field is set.
fn settle(tree: &CollectionTree, set: &BTreeMap<NodeId, bool>, n: NodeId, pc: usize) -> (NodeId, usize) {
    for c in &tree.nodes[n].children {
        if tree.nodes[*c].sm_start == Some(pc) && set.get(c).copied().unwrap_or(false) {
            return settle(tree, set, *c, pc);
        }
    }
    (n, pc)
}

/// `None` is the return-void trampoline.
fn successors(
    tree: &CollectionTree,
    set: &BTreeMap<NodeId, bool>,
    n: NodeId,
    pc: usize,
) -> Vec<Option<(NodeId, usize)>> {
    let insn = &tree.nodes[n].entry_at(pc).expect("visited entries exist").insn;
    let mut targets = Vec::new();
    if insn.falls_through() {
        targets.push(pc + insn.width());
    }
    if let Some(off) = insn.branch_offset() {
        targets.push((pc as i64 + off as i64) as usize);
    }
    targets
        .into_iter()
        .map(|t| {
            let owner = if tree.nodes[n].iim.contains_key(&t) {
                Some(n)
            } else {
                tree.nodes[n].parent.filter(|p| tree.nodes[*p].iim.contains_key(&t))
            };
            owner.map(|o| settle(tree, set, o, t))
        })
        .collect()
}

fn select_target(targets: &[u32], chosen: &BTreeMap<u32, bool>) -> u32 {
    targets[1..].iter().copied().find(|t| chosen.get(t).copied().unwrap_or(false)).unwrap_or(targets[0])
}

fn conformance(
    original: &Container,
    t: &Target<'_>,
    nodes: &BTreeMap<NodeId, bool>,
    sites: &BTreeMap<usize, BTreeMap<u32, bool>>,
    run: &Replayed,
) -> Result<(), String> {
    let tree = t.tree;
    let first = run.visits.first().ok_or("nothing replayed")?;
    if (first.node, first.pc) != settle(tree, nodes, CollectionTree::ROOT, 0) {
        return Err(format!("starts at node {} pc {:#x}", first.node, first.pc));
    }
    for v in &run.visits {
        let insn = &tree.nodes[v.node].entry_at(v.pc).ok_or("visit outside the tree")?.insn;
        let expected = match insn {
            Instruction::Invoke { method, .. } => Some(*method as u32),
            Instruction::InvokeIdx { .. } => {
                let targets: Vec<u32> = tree
                    .reflection
                    .iter()
                    .filter(|r| r.method == t.method && r.pc == v.pc)
                    .map(|r| r.target)
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .collect();
                if targets.is_empty() {
                    v.callee
                } else {
                    Some(select_target(&targets, sites.get(&v.pc).unwrap_or(&BTreeMap::new())))
                }
            }
            _ => None,
        };
        if v.callee != expected {
            let name = |m: Option<u32>| m.map(|m| original.method_key(m)).unwrap_or_else(|| "nothing".into());
            return Err(format!("pc {:#x} calls {}, expected {}", v.pc, name(v.callee), name(expected)));
        }
    }
    for w in run.visits.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if !successors(tree, nodes, a.node, a.pc).contains(&Some((b.node, b.pc))) {
            return Err(format!("node {} pc {:#x} continues at node {} pc {:#x}", a.node, a.pc, b.node, b.pc));
        }
    }
    let last = run.visits.last().unwrap();
    match &run.outcome {
        Ok(_) => {
            let insn = &tree.nodes[last.node].entry_at(last.pc).unwrap().insn;
            let returns = matches!(insn, Instruction::Return { .. } | Instruction::ReturnVoid);
            if !returns && !successors(tree, nodes, last.node, last.pc).contains(&None) {
                return Err(format!("returned after node {} pc {:#x}", last.node, last.pc));
            }
            Ok(())
        }
        Err(RuntimeError::StepBudgetExceeded { .. }) => Ok(()),
        Err(e) => Err(format!("replay faulted: {e}")),
    }
}

/// Instruction preservation: each emitted instruction standing for an IL
/// entry is that entry, up to pool re-indexing, branch displacement and the
/// lifting of resolved reflective calls.
fn fidelity(original: &Container, r: &Reassembled, t: &Target<'_>) -> Vec<String> {
    let c = &r.container;
    let body = decode_body(&c.methods[t.layout.method as usize].body).expect("reassembled bodies decode");
    let at: BTreeMap<usize, &Instruction> = body.iter().map(|(pc, i)| (*pc, i)).collect();
    let mut out = Vec::new();
    for (epc, origin) in &t.layout.origins {
        let Origin::Il { node, pc } = origin else { continue };
        let Some(entry) = t.tree.nodes[*node].entry_at(*pc) else {
            out.push(format!("{}: origin node {node} pc {pc:#x} is not in the tree", c.method_key(t.layout.method)));
            continue;
        };
        let emitted = at[epc];
        let same = match (&entry.insn, emitted) {
            (Instruction::ConstString { dst: a, string: s }, Instruction::ConstString { dst: b, string: u }) => {
                a == b && original.string(*s as u32) == c.string(*u as u32)
            }
            (Instruction::SGet { dst: a, field: f }, Instruction::SGet { dst: b, field: g })
            | (Instruction::SPut { src: a, field: f }, Instruction::SPut { src: b, field: g }) => {
                a == b && original.field_ref(*f as u32) == c.field_ref(*g as u32)
            }
            (Instruction::Invoke { method: m, args: a }, Instruction::Invoke { method: n, args: b }) => {
                a == b && original.method_key(*m as u32) == c.method_key(*n as u32)
            }
            (Instruction::InvokeIdx { args: a, .. }, Instruction::Invoke { method: n, args: b }) => {
                let target = r.original_of(*n as u32);
                a == b
                    && t.tree.reflection.iter().any(|rec| rec.pc == *pc && Some(rec.target) == target)
                    && r.proxies.values().any(|p| *p == *n as u32)
            }
            (Instruction::If { cond: x, a, b, .. }, Instruction::If { cond: y, a: a2, b: b2, .. }) => {
                x == y && a == a2 && b == b2
            }
            (
                Instruction::Goto { .. } | Instruction::Goto32 { .. },
                Instruction::Goto { .. } | Instruction::Goto32 { .. },
            ) => true,
            (x, y) => x == y,
        };
        if !same {
            out.push(format!("{} pc {epc:#x}: {emitted} stands for {}", c.method_key(t.layout.method), entry.insn));
        }
    }
    out
}

/// Runs both checks for every unique tree in `rec`, brute-forcing at most
/// `2^max_fields` assignments per tree.
pub fn check_replay(original: &Container, rec: &Recording, r: &Reassembled, max_fields: usize) -> ReplayReport {
    let reg = pure_registry(&r.container);
    let remap = Remap { from: original, to: &r.container };
    let mut report = ReplayReport::default();
    for (m, trace) in &rec.traces.methods {
        let layout = &r.methods[m];
        let key = original.method_key(*m);
        let variant_fields: BTreeMap<usize, u32> = r
            .plan
            .fields
            .iter()
            .filter_map(|f| match f.purpose {
                FieldPurpose::Variant { method, variant } if method == *m => Some((variant, f.index?)),
                _ => None,
            })
            .collect();
        for (i, tree) in trace.trees.iter().enumerate() {
            report.trees += 1;
            let t = Target {
                method: *m,
                tree_index: i,
                tree,
                layout: &layout.variants[i],
                main: layout.method,
                dispatching: layout.dispatcher.is_some(),
            };
            report.failures.extend(fidelity(original, r, &t));
            let own: Vec<_> =
                r.plan
                    .fields
                    .iter()
                    .filter(|f| match f.purpose {
                        FieldPurpose::Divergence { method, tree, .. }
                        | FieldPurpose::Reflection { method, tree, .. } => method == *m && tree == t.tree_index,
                        FieldPurpose::Variant { .. } => false,
                    })
                    .collect();
            if own.len() > max_fields {
                report.too_many_fields += 1;
                continue;
            }
            let invocations: Vec<&Invocation> = rec.invocations_of(*m, i).collect();
            let Some(first) = invocations.first() else {
                report.failures.push(format!("{key} tree {i}: no recorded invocation produced it"));
                continue;
            };
            let assignment =
                |bits: u32| -> (Vec<(u32, bool)>, BTreeMap<NodeId, bool>, BTreeMap<usize, BTreeMap<u32, bool>>) {
                    let mut fields: Vec<(u32, bool)> = variant_fields.iter().map(|(v, f)| (*f, *v == i)).collect();
                    let mut nodes = BTreeMap::new();
                    let mut sites: BTreeMap<usize, BTreeMap<u32, bool>> = BTreeMap::new();
                    for (k, f) in own.iter().enumerate() {
                        let on = bits >> k & 1 == 1;
                        fields.push((f.index.expect("placed"), on));
                        match f.purpose {
                            FieldPurpose::Divergence { node, .. } => {
                                nodes.insert(node, on);
                            }
                            FieldPurpose::Reflection { pc, target, .. } => {
                                sites.entry(pc).or_default().insert(target, on);
                            }
                            FieldPurpose::Variant { .. } => {}
                        }
                    }
                    (fields, nodes, sites)
                };
            let all = 1u32 << own.len();
            for bits in 0..all {
                let (fields, nodes, sites) = assignment(bits);
                let run = replay(r, &reg, &remap, &t, first, &fields);
                report.runs += 1;
                if let Err(e) = conformance(original, &t, &nodes, &sites, &run) {
                    report.failures.push(format!("{key} tree {i} assignment {bits:b}: {e}"));
                }
            }
            for inv in invocations {
                if let Some(why) = &inv.inconsistency {
                    report.inconsistent.push(format!("{key} tree {i}: {why}"));
                    continue;
                }
                report.literal_checked += 1;
                let recorded: Vec<(usize, &[mdx_core::CodeUnit])> =
                    inv.steps.iter().map(|s| (s.pc, s.units.as_slice())).collect();
                let calls: Vec<u32> = inv.results.iter().map(|(c, ..)| *c).collect();
                let hit = (0..all).any(|bits| {
                    let (fields, _, _) = assignment(bits);
                    let run = replay(r, &reg, &remap, &t, inv, &fields);
                    let replayed: Vec<(usize, &[mdx_core::CodeUnit])> = run
                        .visits
                        .iter()
                        .map(|v| (v.pc, tree.nodes[v.node].entry_at(v.pc).unwrap().units.as_slice()))
                        .collect();
                    run.outcome.is_ok() && replayed == recorded && run.callees == calls
                });
                if hit {
                    report.literal_passed += 1;
                } else {
                    report.failures.push(format!("{key} tree {i}: no assignment reproduces the recorded sequence"));
                }
            }
        }
    }
    report
}
