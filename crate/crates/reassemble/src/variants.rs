use std::collections::BTreeSet;

use mdx_collect::{MetadataCapture, MethodTrace};
use mdx_core::{Instruction, Reg};

use crate::flatten::{flatten_tree, Names};
use crate::lift::lift;
use crate::plan::{FieldPurpose, InstrumentPlan, MethodRef, Origin, SymBody, SymInsn};
use crate::ReassembleError;

/// The bodies emitted for one original method.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantSet {
    pub method: u32,
    /// One body per unique tree, in trace order.
    pub variants: Vec<SymBody>,
    /// Present when there is more than one variant.
    pub dispatcher: Option<SymBody>,
    pub proxies: BTreeSet<u32>,
}

pub(crate) fn merge_variants(
    trace: &MethodTrace,
    meta: &MetadataCapture,
    names: &Names<'_>,
    plan: &mut InstrumentPlan,
) -> Result<VariantSet, ReassembleError> {
    let method = trace.method;
    let def = meta.methods.get(&method).ok_or(ReassembleError::Dangling(mdx_collect::DanglingIndex {
        section: mdx_core::Section::Methods,
        index: method,
    }))?;
    let mut variants = Vec::with_capacity(trace.trees.len());
    let mut proxies = BTreeSet::new();
    for (i, tree) in trace.trees.iter().enumerate() {
        let mut body = flatten_tree(method, i, tree, def.registers, names, plan)?;
        proxies.extend(lift(&mut body, method, i, tree, meta, names, plan)?);
        if body.uses_scratch && body.base_registers + 2 > 16 {
            return Err(ReassembleError::ScratchRegisterUnavailable { method, registers: def.registers });
        }
        variants.push(body);
    }
    if variants.is_empty() {
        return Err(ReassembleError::InvariantViolation { method, detail: "method trace has no trees".into() });
    }
    let dispatcher = if variants.len() > 1 {
        let proto = meta.protos.get(&def.proto).ok_or(ReassembleError::Dangling(mdx_collect::DanglingIndex {
            section: mdx_core::Section::Protos,
            index: def.proto,
        }))?;
        let params = proto.params.len();
        if params > 4 {
            return Err(ReassembleError::TooManyParameters { method, count: params });
        }
        let void = meta.types.get(&proto.ret).and_then(|s| meta.strings.get(s)).is_some_and(|d| d == "V");
        Some(dispatcher(method, variants.len(), params, void, names, plan))
    } else {
        None
    };
    Ok(VariantSet { method, variants, dispatcher, proxies })
}

/// `k - 1` chained synthetic branches; variant 0 is on the final fall-through.
fn dispatcher(
    method: u32,
    k: usize,
    params: usize,
    void: bool,
    names: &Names<'_>,
    plan: &mut InstrumentPlan,
) -> SymBody {
    let mut body = SymBody::new(params as u16);
    let arms: Vec<_> = (1..k).map(|i| (i, body.label())).collect();
    for (i, l) in &arms {
        let f = plan.allocate(names.class, names.method, FieldPurpose::Variant { method, variant: *i });
        body.guard(f, *l);
    }
    let (t, _) = body.scratch();
    let forward = |body: &mut SymBody, index: usize| {
        let args = (0..params as u8).map(Reg).collect();
        body.push(SymInsn::Invoke { method: MethodRef::Variant { method, index }, args }, Origin::Forward);
        if void {
            body.push(SymInsn::Plain(Instruction::ReturnVoid), Origin::Forward);
        } else {
            body.push(SymInsn::Plain(Instruction::MoveResult { dst: t }), Origin::Forward);
            body.push(SymInsn::Plain(Instruction::Return { src: t }), Origin::Forward);
        }
    };
    forward(&mut body, 0);
    for (i, l) in arms {
        body.bind(l);
        forward(&mut body, i);
    }
    body
}
