//! Reflective call sites become direct calls through proxies.

use std::collections::BTreeSet;

use mdx_collect::{CollectionTree, MetadataCapture};

use crate::flatten::Names;
use crate::plan::{FieldPurpose, InstrumentPlan, Item, MethodRef, Origin, SymBody, SymInsn};
use crate::ReassembleError;

fn arity(meta: &MetadataCapture, m: u32) -> Option<usize> {
    let def = meta.methods.get(&m)?;
    Some(meta.protos.get(&def.proto)?.params.len())
}

/// Rewrites every `invoke-idx` of `body` that has resolution records. A
/// single target becomes `invoke proxy`; several targets become a chain of
/// synthetic branches over the proxies, first target on the fall-through.
/// Returns the targets that need proxies.
pub(crate) fn lift(
    body: &mut SymBody,
    method: u32,
    tree_index: usize,
    tree: &CollectionTree,
    meta: &MetadataCapture,
    names: &Names<'_>,
    plan: &mut InstrumentPlan,
) -> Result<BTreeSet<u32>, ReassembleError> {
    let mut proxies = BTreeSet::new();
    let items = std::mem::take(&mut body.items);
    for item in items {
        let Item::Insn(SymInsn::InvokeIdx { obj, index, args }, Origin::Il { node, pc }) = item else {
            body.items.push(item);
            continue;
        };
        let targets: Vec<u32> = tree
            .reflection
            .iter()
            .filter(|r| r.method == method && r.pc == pc)
            .map(|r| r.target)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let origin = Origin::Il { node, pc };
        if targets.is_empty() {
            body.push(SymInsn::InvokeIdx { obj, index, args }, origin);
            continue;
        }
        for t in &targets {
            let expected = arity(meta, *t).ok_or(ReassembleError::Dangling(mdx_collect::DanglingIndex {
                section: mdx_core::Section::Methods,
                index: *t,
            }))?;
            if expected != args.len() {
                return Err(ReassembleError::ArityMismatch { method, pc, target: *t, expected, given: args.len() });
            }
            proxies.insert(*t);
        }
        let call = |t: u32| SymInsn::Invoke { method: MethodRef::Proxy(t), args: args.clone() };
        if targets.len() == 1 {
            body.push(call(targets[0]), origin);
            continue;
        }
        let end = body.label();
        let arms: Vec<_> = targets[1..].iter().map(|t| (*t, body.label())).collect();
        for (t, l) in &arms {
            let purpose = FieldPurpose::Reflection { method, tree: tree_index, pc, target: *t };
            let f = plan.allocate(names.class, names.method, purpose);
            body.guard(f, *l);
        }
        body.push(call(targets[0]), origin);
        body.push(SymInsn::Goto { target: end }, Origin::Jump);
        for (t, l) in arms {
            body.bind(l);
            body.push(call(t), origin);
            body.push(SymInsn::Goto { target: end }, Origin::Jump);
        }
        body.bind(end);
    }
    Ok(proxies)
}
