//! Per-invocation collection trees.
//!
//! A tree starts as a single root. Each executed instruction is matched
//! against the current node by `dex_pc`:
//!
//! * (a) recorded with the same units: nothing to do;
//! * (b) recorded with different units: open a child at this pc and append;
//! * (c) unknown here, but the parent recorded the same units at this pc:
//!   the divergence has converged, so close the child and move up;
//! * (d) otherwise append to the current node.
//!
//! Only the immediate parent is consulted for convergence.

use std::collections::{BTreeMap, BTreeSet};

use mdx_core::{decode_instruction, CodeUnit, Instruction};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IlEntry {
    pub pc: usize,
    pub units: Vec<CodeUnit>,
    pub insn: Instruction,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TreeNode {
    /// Instructions in first-execution order.
    pub il: Vec<IlEntry>,
    /// `dex_pc` to position in `il`.
    pub iim: BTreeMap<usize, usize>,
    pub sm_start: Option<usize>,
    pub sm_end: Option<usize>,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

impl TreeNode {
    pub fn entry_at(&self, pc: usize) -> Option<&IlEntry> {
        self.iim.get(&pc).map(|i| &self.il[*i])
    }

    fn push(&mut self, pc: usize, units: &[CodeUnit], insn: &Instruction) {
        self.iim.insert(pc, self.il.len());
        self.il.push(IlEntry { pc, units: units.to_vec(), insn: insn.clone() });
    }
}

/// A runtime-resolved `invoke-idx` target, keyed by call-site pc.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReflectionRecord {
    pub method: u32,
    pub pc: usize,
    pub target: u32,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectionTree {
    pub method: u32,
    /// Node arena in depth-first pre-order; node 0 is the root.
    pub nodes: Vec<TreeNode>,
    pub reflection: BTreeSet<ReflectionRecord>,
}

impl CollectionTree {
    pub const ROOT: NodeId = 0;

    pub fn root(&self) -> &TreeNode {
        &self.nodes[Self::ROOT]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &CollectionTree, n: NodeId) -> usize {
            t.nodes[n].children.iter().map(|c| 1 + go(t, *c)).max().unwrap_or(0)
        }
        go(self, Self::ROOT)
    }

    /// Same node shape, IL contents and divergence bounds.
    pub fn same_structure(&self, other: &CollectionTree) -> bool {
        self.method == other.method && self.nodes == other.nodes
    }

    /// Checks the structural invariants; returns the first broken one.
    pub fn check(&self) -> Result<(), String> {
        for (id, n) in self.nodes.iter().enumerate() {
            if n.iim.len() != n.il.len() {
                return Err(format!("node {id}: IIM and IL sizes differ"));
            }
            for (i, e) in n.il.iter().enumerate() {
                if n.iim.get(&e.pc) != Some(&i) {
                    return Err(format!("node {id}: IIM does not map pc {} to {i}", e.pc));
                }
                match decode_instruction(&e.units, 0) {
                    Ok((insn, len)) if insn == e.insn && len == e.units.len() => {}
                    _ => return Err(format!("node {id}: units at pc {} do not decode to the record", e.pc)),
                }
            }
            if (id == Self::ROOT) != n.sm_start.is_none() {
                return Err(format!("node {id}: sm_start presence is wrong"));
            }
            if id == Self::ROOT && (n.sm_end.is_some() || n.parent.is_some()) {
                return Err("root has divergence bounds or a parent".into());
            }
            let mut seen = BTreeSet::new();
            for c in &n.children {
                if self.nodes.get(*c).and_then(|cn| cn.parent) != Some(id) || *c <= id {
                    return Err(format!("node {id}: child link {c} inconsistent"));
                }
                let cn = &self.nodes[*c];
                let first = cn.il.first().map(|e| e.units.clone());
                if !seen.insert((cn.sm_start, first)) {
                    return Err(format!("node {id}: duplicate child divergence"));
                }
            }
        }
        Ok(())
    }

    /// Renumbers nodes into depth-first pre-order so that structurally equal
    /// trees are also equal as arenas.
    fn canonicalize(&mut self) {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![Self::ROOT];
        while let Some(n) = stack.pop() {
            order.push(n);
            stack.extend(self.nodes[n].children.iter().rev());
        }
        let mut new_id = vec![0; self.nodes.len()];
        for (new, old) in order.iter().enumerate() {
            new_id[*old] = new;
        }
        let mut nodes: Vec<TreeNode> = order.iter().map(|o| self.nodes[*o].clone()).collect();
        for n in &mut nodes {
            n.parent = n.parent.map(|p| new_id[p]);
            for c in &mut n.children {
                *c = new_id[*c];
            }
        }
        self.nodes = nodes;
    }
}

/// Incremental Algorithm 1 state for one invocation.
#[derive(Debug, Clone)]
pub struct TreeBuilder {
    tree: CollectionTree,
    current: NodeId,
    last_pc: Vec<Option<usize>>,
}

impl TreeBuilder {
    /// "create node root; current = root".
    pub fn new(method: u32) -> Self {
        TreeBuilder {
            tree: CollectionTree { method, nodes: vec![TreeNode::default()], reflection: BTreeSet::new() },
            current: CollectionTree::ROOT,
            last_pc: vec![None],
        }
    }

    pub fn current(&self) -> NodeId {
        self.current
    }

    pub fn tree(&self) -> &CollectionTree {
        &self.tree
    }

    /// One record per (site, target); the shallowest depth is kept.
    pub fn record_reflection(&mut self, r: ReflectionRecord) {
        let same = |x: &ReflectionRecord| x.method == r.method && x.pc == r.pc && x.target == r.target;
        if let Some(old) = self.tree.reflection.iter().find(|x| same(x)).copied() {
            if old.depth <= r.depth {
                return;
            }
            self.tree.reflection.remove(&old);
        }
        self.tree.reflection.insert(r);
    }

    pub fn on_instruction(&mut self, pc: usize, units: &[CodeUnit], insn: &Instruction) {
        let cur = self.current;
        if let Some(old) = self.tree.nodes[cur].entry_at(pc) {
            if old.units == units {
                // (a)
                self.last_pc[cur] = Some(pc);
                return;
            }
            // (b) A sibling that diverged here the same way before is reused
            // instead of opening a twin, keeping children pairwise distinct.
            let existing = self.tree.nodes[cur].children.iter().copied().find(|c| {
                let n = &self.tree.nodes[*c];
                n.sm_start == Some(pc) && n.il.first().is_some_and(|e| e.units == units)
            });
            let child = match existing {
                Some(c) => c,
                None => {
                    let id = self.tree.nodes.len();
                    self.tree.nodes.push(TreeNode { sm_start: Some(pc), parent: Some(cur), ..TreeNode::default() });
                    self.tree.nodes[cur].children.push(id);
                    self.last_pc.push(None);
                    id
                }
            };
            self.current = child;
            self.last_pc[child] = Some(pc);
            if existing.is_none() {
                self.tree.nodes[child].push(pc, units, insn);
            }
            return;
        }
        if let Some(parent) = self.tree.nodes[cur].parent {
            if self.tree.nodes[parent].entry_at(pc).is_some_and(|old| old.units == units) {
                // (c)
                let node = &mut self.tree.nodes[cur];
                if node.sm_end.is_none() {
                    node.sm_end = Some(pc);
                }
                self.current = parent;
                self.last_pc[parent] = Some(pc);
                return;
            }
        }
        // (d)
        self.tree.nodes[cur].push(pc, units, insn);
        self.last_pc[cur] = Some(pc);
    }

    /// Closes every still-open divergence at the last pc it executed and
    /// returns the canonical tree.
    pub fn finish(mut self) -> CollectionTree {
        for (id, node) in self.tree.nodes.iter_mut().enumerate() {
            if node.sm_start.is_some() && node.sm_end.is_none() {
                node.sm_end = self.last_pc[id].or(node.sm_start);
            }
        }
        self.tree.canonicalize();
        self.tree
    }
}

/// Unique trees of one method, in order of first occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodTrace {
    pub method: u32,
    pub trees: Vec<CollectionTree>,
}

impl MethodTrace {
    pub fn new(method: u32) -> Self {
        MethodTrace { method, trees: Vec::new() }
    }

    /// Adds `tree` unless a structurally equal tree is present, in which case
    /// only its reflection records are merged in.
    pub fn add(&mut self, tree: CollectionTree) {
        debug_assert_eq!(tree.method, self.method);
        match self.trees.iter_mut().find(|t| t.same_structure(&tree)) {
            Some(t) => t.reflection.extend(tree.reflection),
            None => self.trees.push(tree),
        }
    }
}

/// Structural dedup of the trees of one method; first occurrence wins.
pub fn dedup_trees(method: u32, trees: impl IntoIterator<Item = CollectionTree>) -> MethodTrace {
    let mut trace = MethodTrace::new(method);
    for t in trees {
        trace.add(t);
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use mdx_core::{encode_instruction, Reg};

    fn feed(b: &mut TreeBuilder, pc: usize, insn: Instruction) {
        let units = encode_instruction(&insn).unwrap();
        b.on_instruction(pc, &units, &insn);
    }

    fn konst(v: i16) -> Instruction {
        Instruction::Const { dst: Reg(0), value: v }
    }

    #[test]
    fn straight_line_is_root_only() {
        let mut b = TreeBuilder::new(0);
        feed(&mut b, 0, konst(1));
        feed(&mut b, 2, konst(2));
        feed(&mut b, 4, Instruction::ReturnVoid);
        let t = b.finish();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.root().il.iter().map(|e| e.pc).collect::<Vec<_>>(), vec![0, 2, 4]);
        t.check().unwrap();
    }

    #[test]
    fn repeat_is_noop_and_change_diverges_then_converges() {
        let mut b = TreeBuilder::new(0);
        feed(&mut b, 0, konst(1));
        feed(&mut b, 2, konst(2));
        feed(&mut b, 0, konst(1));
        feed(&mut b, 2, konst(9)); // (b)
        assert_eq!(b.current(), 1);
        feed(&mut b, 0, konst(1)); // (c)
        assert_eq!(b.current(), 0);
        feed(&mut b, 2, konst(9)); // same divergence again: reuse the child
        assert_eq!(b.current(), 1);
        feed(&mut b, 4, Instruction::ReturnVoid); // (d) in the child
        let t = b.finish();
        assert_eq!(t.nodes.len(), 2);
        let child = &t.nodes[1];
        assert_eq!(child.sm_start, Some(2));
        assert_eq!(child.sm_end, Some(0));
        assert_eq!(child.il.len(), 2);
        t.check().unwrap();
    }

    #[test]
    fn open_divergence_closes_at_last_pc() {
        let mut b = TreeBuilder::new(0);
        feed(&mut b, 0, konst(1));
        feed(&mut b, 0, konst(2));
        feed(&mut b, 2, Instruction::ReturnVoid);
        let t = b.finish();
        assert_eq!(t.nodes[1].sm_end, Some(2));
    }

    #[test]
    fn grandchild_convergence_only_reaches_the_parent() {
        let mut b = TreeBuilder::new(0);
        feed(&mut b, 0, konst(1));
        feed(&mut b, 2, konst(1));
        feed(&mut b, 0, konst(2)); // child of root
        feed(&mut b, 0, konst(3)); // grandchild
                                   // pc 2 is recorded only in the root, two levels up: appended, not converged.
        feed(&mut b, 2, konst(1));
        assert_eq!(b.current(), 2);
        let t = b.finish();
        assert_eq!(t.nodes[2].il.len(), 2);
        assert_eq!(t.depth(), 2);
    }

    #[test]
    fn dedup_keeps_first_occurrence_and_is_idempotent() {
        let mut b = TreeBuilder::new(3);
        feed(&mut b, 0, Instruction::ReturnVoid);
        let t = b.finish();
        let mut other = TreeBuilder::new(3);
        feed(&mut other, 0, konst(0));
        let u = other.finish();
        let trace = dedup_trees(3, vec![t.clone(), t.clone(), u.clone(), t.clone()]);
        assert_eq!(trace.trees, vec![t, u]);
        assert_eq!(dedup_trees(3, trace.trees.clone()), trace);
    }
}
