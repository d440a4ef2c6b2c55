//! One collection tree to one symbolic body.
//!
//! Every node becomes a block holding its IL entries in ascending pc order.
//! In front of the entry at pc `p` of node `N` sits one synthetic branch per
//! child of `N` that diverged at `p`; the taken arm enters the child's block,
//! the fall-through keeps `N`'s own instruction. Control leaving an entry at
//! target `t` goes to `N`'s entry at `t`, else to the parent's entry at `t`
//! (where the divergence converged), else to a `return-void` trampoline.

use std::collections::HashMap;

use mdx_collect::{CollectionTree, IlEntry, NodeId};
use mdx_core::Instruction;

use crate::plan::{FieldId, FieldPurpose, FieldRef, InstrumentPlan, MethodRef, Origin, SymBody, SymInsn, SymLabel};
use crate::ReassembleError;

/// Blocks in emission order: root first, then a depth-first walk with
/// siblings by ascending `sm_start`, ties in collection order.
pub(crate) fn block_order(tree: &CollectionTree) -> Vec<NodeId> {
    fn walk(tree: &CollectionTree, n: NodeId, out: &mut Vec<NodeId>) {
        out.push(n);
        let mut kids = tree.nodes[n].children.clone();
        kids.sort_by_key(|c| tree.nodes[*c].sm_start);
        for c in kids {
            walk(tree, c, out);
        }
    }
    let mut out = Vec::with_capacity(tree.nodes.len());
    walk(tree, CollectionTree::ROOT, &mut out);
    out
}

pub(crate) struct Names<'a> {
    pub class: &'a str,
    pub method: &'a str,
}

pub(crate) fn flatten_tree(
    method: u32,
    tree_index: usize,
    tree: &CollectionTree,
    registers: u16,
    names: &Names<'_>,
    plan: &mut InstrumentPlan,
) -> Result<SymBody, ReassembleError> {
    let violation = |detail: String| ReassembleError::InvariantViolation { method, detail };
    tree.check().map_err(violation)?;
    let mut body = SymBody::new(registers);
    let order = block_order(tree);

    let mut labels: HashMap<(NodeId, usize), SymLabel> = HashMap::new();
    for n in &order {
        for e in &tree.nodes[*n].il {
            let l = body.label();
            labels.insert((*n, e.pc), l);
        }
    }
    let mut fields: HashMap<NodeId, FieldId> = HashMap::new();
    for n in order.iter().skip(1) {
        let node = &tree.nodes[*n];
        let start = node.sm_start.expect("checked: non-root nodes have sm_start");
        let parent = node.parent.expect("checked: non-root nodes have a parent");
        if !tree.nodes[parent].iim.contains_key(&start) {
            return Err(violation(format!("node {n} diverges at pc {start}, which its parent never recorded")));
        }
        if !node.iim.contains_key(&start) {
            return Err(violation(format!("node {n} does not record its own divergence pc {start}")));
        }
        let purpose = FieldPurpose::Divergence { method, tree: tree_index, node: *n };
        fields.insert(*n, plan.allocate(names.class, names.method, purpose));
    }

    let mut trampoline: Option<SymLabel> = None;
    let mut resolve = |body: &mut SymBody, n: NodeId, t: usize| -> SymLabel {
        if let Some(l) = labels.get(&(n, t)) {
            return *l;
        }
        if let Some(p) = tree.nodes[n].parent {
            if let Some(l) = labels.get(&(p, t)) {
                return *l;
            }
        }
        *trampoline.get_or_insert_with(|| body.label())
    };

    for n in &order {
        let node = &tree.nodes[*n];
        let mut entries: Vec<&IlEntry> = node.il.iter().collect();
        entries.sort_by_key(|e| e.pc);
        for (k, e) in entries.iter().enumerate() {
            body.bind(labels[&(*n, e.pc)]);
            for c in &node.children {
                if tree.nodes[*c].sm_start == Some(e.pc) {
                    body.guard(fields[c], labels[&(*c, e.pc)]);
                }
            }
            let origin = Origin::Il { node: *n, pc: e.pc };
            let at = |off: i32| (e.pc as i64 + off as i64) as usize;
            let sym = match &e.insn {
                Instruction::If { cond, a, b, offset } => {
                    let target = resolve(&mut body, *n, at(*offset as i32));
                    SymInsn::If { cond: *cond, a: *a, b: *b, target }
                }
                Instruction::Goto { offset } => SymInsn::Goto { target: resolve(&mut body, *n, at(*offset as i32)) },
                Instruction::Goto32 { offset } => SymInsn::Goto { target: resolve(&mut body, *n, at(*offset)) },
                insn => translate(insn),
            };
            body.push(sym, origin);
            if e.insn.falls_through() {
                let next = resolve(&mut body, *n, e.pc + e.insn.width());
                let adjacent = entries.get(k + 1).map(|f| labels[&(*n, f.pc)]);
                if adjacent != Some(next) {
                    body.push(SymInsn::Goto { target: next }, Origin::Jump);
                }
            }
        }
    }
    if let Some(l) = trampoline {
        body.bind(l);
        body.push(SymInsn::Plain(Instruction::ReturnVoid), Origin::Trampoline);
    }
    Ok(body)
}

/// Symbolic form of a non-branch instruction.
pub(crate) fn translate(insn: &Instruction) -> SymInsn {
    match insn {
        Instruction::ConstString { dst, string } => SymInsn::ConstString { dst: *dst, string: *string as u32 },
        Instruction::SGet { dst, field } => SymInsn::SGet { dst: *dst, field: FieldRef::Orig(*field as u32) },
        Instruction::SPut { src, field } => SymInsn::SPut { src: *src, field: FieldRef::Orig(*field as u32) },
        Instruction::Invoke { method, args } => {
            SymInsn::Invoke { method: MethodRef::Orig(*method as u32), args: args.clone() }
        }
        Instruction::InvokeIdx { obj, index, args } => {
            SymInsn::InvokeIdx { obj: *obj, index: *index, args: args.clone() }
        }
        other => SymInsn::Plain(other.clone()),
    }
}
