//! Shortest forced path to an uncovered arm over the recorded code.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use mdx_collect::Traces;
use mdx_core::{Instruction, MethodKind};
use mdx_vm::{Arm, BranchSite, PathSpec};

/// Edge label: the conditional arm taken to cross it, if any.
type Edge = ((u32, usize), Option<Arm>);

/// Union of every recorded IL as a graph over `(method, pc)`. Calls into
/// recorded bytecode methods add an edge to the callee's first instruction
/// besides the edge to the instruction after the call.
#[derive(Debug, Clone, Default)]
pub struct RecordedGraph {
    edges: BTreeMap<(u32, usize), BTreeSet<Edge>>,
}

impl RecordedGraph {
    pub fn new(traces: &Traces) -> Self {
        let mut g = RecordedGraph::default();
        let recorded: BTreeSet<(u32, usize)> = traces
            .all_trees()
            .flat_map(|t| t.nodes.iter().flat_map(move |n| n.il.iter().map(move |e| (t.method, e.pc))))
            .collect();
        for t in traces.all_trees() {
            let m = t.method;
            for e in t.nodes.iter().flat_map(|n| &n.il) {
                let out = g.edges.entry((m, e.pc)).or_default();
                let next = e.pc + e.insn.width();
                let mut push = |to: (u32, usize), arm| {
                    if recorded.contains(&to) {
                        out.insert((to, arm));
                    }
                };
                match &e.insn {
                    Instruction::If { .. } => {
                        push((m, next), Some(Arm::FallThrough));
                        push(
                            (m, e.insn.branch_offset().map(|o| (e.pc as i64 + o as i64) as usize).unwrap()),
                            Some(Arm::Taken),
                        );
                    }
                    insn => {
                        if let Some(o) = insn.branch_offset() {
                            push((m, (e.pc as i64 + o as i64) as usize), None);
                        }
                        if insn.falls_through() {
                            push((m, next), None);
                        }
                        if let Instruction::Invoke { method, .. } = insn {
                            let known = traces
                                .meta
                                .methods
                                .get(&(*method as u32))
                                .is_some_and(|d| d.kind == MethodKind::Bytecode);
                            if known {
                                push((*method as u32, 0), None);
                            }
                        }
                    }
                }
                // Reflective calls reach their recorded targets.
                for r in t.reflection.iter().filter(|r| r.method == m && r.pc == e.pc) {
                    push((r.target, 0), None);
                }
            }
        }
        g
    }

    fn successors(&self, at: (u32, usize)) -> impl Iterator<Item = &Edge> {
        self.edges.get(&at).into_iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no recorded path reaches {0}")]
pub struct Unreachable(pub BranchSite);

/// Breadth-first from the entry method's first instruction to the branch of
/// `ucb`, neighbours in `(method, pc)` order. Every conditional crossed is
/// forced to the arm the path takes; the last entry forces the UCB arm.
pub fn compute_path(traces: &Traces, graph: &RecordedGraph, ucb: BranchSite) -> Result<PathSpec, Unreachable> {
    let start = (traces.entry, 0);
    let goal = (ucb.method, ucb.pc);
    let mut prev: BTreeMap<(u32, usize), ((u32, usize), Option<Arm>)> = BTreeMap::new();
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    let mut found = start == goal && graph.edges.contains_key(&start);
    while let Some(at) = queue.pop_front() {
        if found {
            break;
        }
        for (to, arm) in graph.successors(at) {
            if seen.insert(*to) {
                prev.insert(*to, (at, *arm));
                if *to == goal {
                    found = true;
                    break;
                }
                queue.push_back(*to);
            }
        }
    }
    if !found {
        return Err(Unreachable(ucb));
    }
    let mut entries = vec![ucb];
    let mut at = goal;
    while let Some((from, arm)) = prev.get(&at) {
        if let Some(arm) = arm {
            entries.push(BranchSite { method: from.0, pc: from.1, arm: *arm });
        }
        at = *from;
    }
    entries.reverse();
    Ok(PathSpec { target: Some(ucb), entries })
}
