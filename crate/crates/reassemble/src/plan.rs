//! Instrument fields and the symbolic bodies that reference them.

use std::fmt::Write as _;

use mdx_collect::NodeId;
use mdx_core::{ArgList, Cond, Instruction, Reg};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTRUMENT_CLASS: &str = "Lmdx/Modification;";
pub const SEED_PREFIX: &str = "mdx-instrument-seed:";
pub const PROXY_PREFIX: &str = "reveal_";

pub type FieldId = usize;

/// What a synthetic branch selects when its field is nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FieldPurpose {
    /// Enter divergence `node` of tree `tree` of `method`.
    Divergence { method: u32, tree: usize, node: NodeId },
    /// Call variant `variant` (never 0) from the dispatcher of `method`.
    Variant { method: u32, variant: usize },
    /// At the reflective site `pc` of tree `tree`, call `target`.
    Reflection { method: u32, tree: usize, pc: usize, target: u32 },
}

impl FieldPurpose {
    pub fn method(&self) -> u32 {
        match *self {
            FieldPurpose::Divergence { method, .. }
            | FieldPurpose::Variant { method, .. }
            | FieldPurpose::Reflection { method, .. } => method,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrumentField {
    pub name: String,
    pub purpose: FieldPurpose,
    pub initial: bool,
    /// Index in the emitted field pool, set when the container is built.
    pub index: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrumentPlan {
    pub class: String,
    pub seed: u64,
    pub fields: Vec<InstrumentField>,
}

pub(crate) fn sanitize(descriptor: &str) -> String {
    descriptor
        .trim_start_matches('L')
        .trim_end_matches(';')
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

impl InstrumentPlan {
    pub fn new(seed: u64) -> Self {
        InstrumentPlan { class: INSTRUMENT_CLASS.to_owned(), seed, fields: Vec::new() }
    }

    /// Allocates a field named `<class>_<method>_<ordinal>`.
    pub(crate) fn allocate(&mut self, class: &str, method: &str, purpose: FieldPurpose) -> FieldId {
        let prefix = format!("{}_{}_", sanitize(class), method);
        let ordinal = self.fields.iter().filter(|f| f.name.starts_with(&prefix)).count();
        self.fields.push(InstrumentField { name: format!("{prefix}{ordinal}"), purpose, initial: false, index: None });
        self.fields.len() - 1
    }

    /// Draws every initial value from the plan's seed.
    pub(crate) fn draw_initial_values(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for f in &mut self.fields {
            f.initial = rng.gen();
        }
    }

    pub fn for_method(&self, method: u32) -> impl Iterator<Item = (FieldId, &InstrumentField)> {
        self.fields.iter().enumerate().filter(move |(_, f)| f.purpose.method() == method)
    }

    pub fn find(&self, purpose: &FieldPurpose) -> Option<FieldId> {
        self.fields.iter().position(|f| &f.purpose == purpose)
    }

    /// One line per field: `field <name> <index> <0|1> <purpose...>`.
    pub fn to_text(&self) -> String {
        let mut s = format!("mdx-plan v1\nclass {}\nseed {}\n", self.class, self.seed);
        for f in &self.fields {
            let idx = f.index.map_or("-".to_string(), |i| i.to_string());
            let _ = write!(s, "field {} {} {} ", f.name, idx, f.initial as u8);
            let _ = match f.purpose {
                FieldPurpose::Divergence { method, tree, node } => writeln!(s, "divergence {method} {tree} {node}"),
                FieldPurpose::Variant { method, variant } => writeln!(s, "variant {method} {variant}"),
                FieldPurpose::Reflection { method, tree, pc, target } => {
                    writeln!(s, "reflection {method} {tree} {pc} {target}")
                }
            };
        }
        s
    }
}

/// Method operand before pool rebuilding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MethodRef {
    Orig(u32),
    Variant {
        method: u32,
        index: usize,
    },
    /// Forwarder to the given original method, in the instrument class.
    Proxy(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldRef {
    Orig(u32),
    Instrument(FieldId),
}

pub type SymLabel = usize;

/// Instruction with symbolic pool operands and label branch targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SymInsn {
    /// No pool operand and no branch.
    Plain(Instruction),
    ConstString {
        dst: Reg,
        string: u32,
    },
    SGet {
        dst: Reg,
        field: FieldRef,
    },
    SPut {
        src: Reg,
        field: FieldRef,
    },
    Invoke {
        method: MethodRef,
        args: ArgList,
    },
    InvokeIdx {
        obj: Reg,
        index: Reg,
        args: ArgList,
    },
    If {
        cond: Cond,
        a: Reg,
        b: Reg,
        target: SymLabel,
    },
    Goto {
        target: SymLabel,
    },
}

/// Where an emitted instruction came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    /// IL entry at `pc` of `node`.
    Il { node: NodeId, pc: usize },
    /// Part of the synthetic branch reading `field`.
    Guard(FieldId),
    /// Inserted jump joining blocks.
    Jump,
    /// `return-void` standing in for an unrecorded branch target.
    Trampoline,
    /// Dispatcher call into a variant, or its return.
    Forward,
}

impl Origin {
    pub fn is_synthetic(&self) -> bool {
        !matches!(self, Origin::Il { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Item {
    Label(SymLabel),
    Insn(SymInsn, Origin),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SymBody {
    pub items: Vec<Item>,
    pub labels: usize,
    /// Registers of the original method; scratch registers come after.
    pub base_registers: u16,
    pub uses_scratch: bool,
}

impl SymBody {
    pub fn new(base_registers: u16) -> Self {
        SymBody { base_registers, ..SymBody::default() }
    }

    pub fn label(&mut self) -> SymLabel {
        self.labels += 1;
        self.labels - 1
    }

    pub fn bind(&mut self, l: SymLabel) {
        self.items.push(Item::Label(l));
    }

    pub fn push(&mut self, insn: SymInsn, origin: Origin) {
        self.items.push(Item::Insn(insn, origin));
    }

    pub fn scratch(&self) -> (Reg, Reg) {
        (Reg(self.base_registers as u8), Reg(self.base_registers as u8 + 1))
    }

    pub fn registers(&self) -> u16 {
        self.base_registers + if self.uses_scratch { 2 } else { 0 }
    }

    /// `sget t, f; const z, 0; if-ne t, z -> target`.
    pub fn guard(&mut self, field: FieldId, target: SymLabel) {
        self.uses_scratch = true;
        let (t, z) = self.scratch();
        let o = Origin::Guard(field);
        self.push(SymInsn::SGet { dst: t, field: FieldRef::Instrument(field) }, o);
        self.push(SymInsn::Plain(Instruction::Const { dst: z, value: 0 }), o);
        self.push(SymInsn::If { cond: Cond::Ne, a: t, b: z, target }, o);
    }

    pub fn calls(&self) -> impl Iterator<Item = MethodRef> + '_ {
        self.items.iter().filter_map(|i| match i {
            Item::Insn(SymInsn::Invoke { method, .. }, _) => Some(*method),
            _ => None,
        })
    }
}
