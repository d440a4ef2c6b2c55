//! Label-based assembler with fixpoint branch relaxation.
//!
//! Branches are emitted in their short form first. Layout is recomputed until
//! every displacement fits its field: an overflowing `goto/16` is widened to
//! `goto/32`, and an overflowing `if-*` is rewritten into
//! `if-* +5; goto/32 <next>; goto/32 <target>`. Widening is monotone, so the
//! loop terminates.

use thiserror::Error;

use crate::codec::{encode_into, EncodeError};
use crate::isa::{CodeUnit, Cond, Instruction, Reg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("label {0} referenced but never bound")]
    UnboundLabel(u32),
    #[error("label {0} bound twice")]
    Rebound(u32),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

#[derive(Debug, Clone)]
enum Item {
    Bind(Label),
    Plain(Instruction),
    If { cond: Cond, a: Reg, b: Reg, target: Label },
    Goto { target: Label, force_long: bool },
}

#[derive(Debug, Clone, Default)]
pub struct Assembler {
    items: Vec<Item>,
    next_label: u32,
}

/// Result of assembling: the units plus the final pc of every label and item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembled {
    pub units: Vec<CodeUnit>,
    labels: Vec<Option<usize>>,
    item_pcs: Vec<usize>,
}

impl Assembled {
    pub fn label_pc(&self, label: Label) -> usize {
        self.labels[label.0 as usize].expect("label bound")
    }

    /// Pc of the item returned by an `emit*` call.
    pub fn item_pc(&self, item: usize) -> usize {
        self.item_pcs[item]
    }
}

impl Assembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn label(&mut self) -> Label {
        let l = Label(self.next_label);
        self.next_label += 1;
        l
    }

    pub fn bind(&mut self, label: Label) {
        self.items.push(Item::Bind(label));
    }

    /// Emits an instruction verbatim (raw branch offsets are kept as given).
    pub fn emit(&mut self, insn: Instruction) -> usize {
        self.items.push(Item::Plain(insn));
        self.items.len() - 1
    }

    pub fn branch(&mut self, cond: Cond, a: Reg, b: Reg, target: Label) -> usize {
        self.items.push(Item::If { cond, a, b, target });
        self.items.len() - 1
    }

    pub fn goto(&mut self, target: Label) -> usize {
        self.items.push(Item::Goto { target, force_long: false });
        self.items.len() - 1
    }

    /// Always emits `goto/32`.
    pub fn goto_long(&mut self, target: Label) -> usize {
        self.items.push(Item::Goto { target, force_long: true });
        self.items.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn size(item: &Item, long: bool) -> usize {
        match item {
            Item::Bind(_) => 0,
            Item::Plain(i) => i.width(),
            Item::If { .. } => {
                if long {
                    8
                } else {
                    2
                }
            }
            Item::Goto { .. } => {
                if long {
                    3
                } else {
                    2
                }
            }
        }
    }

    fn layout(&self, long: &[bool]) -> Result<(Vec<usize>, Vec<Option<usize>>), AsmError> {
        let mut labels = vec![None; self.next_label as usize];
        let mut pcs = Vec::with_capacity(self.items.len());
        let mut pc = 0;
        for (i, item) in self.items.iter().enumerate() {
            pcs.push(pc);
            if let Item::Bind(l) = item {
                let slot = &mut labels[l.0 as usize];
                if slot.is_some() {
                    return Err(AsmError::Rebound(l.0));
                }
                *slot = Some(pc);
            }
            pc += Self::size(item, long[i]);
        }
        Ok((pcs, labels))
    }

    pub fn assemble(&self) -> Result<Assembled, AsmError> {
        let mut long: Vec<bool> = self.items.iter().map(|i| matches!(i, Item::Goto { force_long: true, .. })).collect();
        let (pcs, labels) = loop {
            let (pcs, labels) = self.layout(&long)?;
            let mut changed = false;
            for (i, item) in self.items.iter().enumerate() {
                let target = match item {
                    Item::If { target, .. } | Item::Goto { target, .. } => *target,
                    _ => continue,
                };
                let dest = labels[target.0 as usize].ok_or(AsmError::UnboundLabel(target.0))?;
                let off = dest as i64 - pcs[i] as i64;
                if !long[i] && i16::try_from(off).is_err() {
                    long[i] = true;
                    changed = true;
                }
            }
            if !changed {
                break (pcs, labels);
            }
        };

        let mut units = Vec::new();
        for (i, item) in self.items.iter().enumerate() {
            let pc = pcs[i] as i64;
            let dest = |t: &Label| labels[t.0 as usize].expect("checked during layout") as i64;
            match item {
                Item::Bind(_) => {}
                Item::Plain(insn) => encode_into(insn, &mut units)?,
                Item::If { cond, a, b, target } => {
                    if long[i] {
                        let insn = Instruction::If { cond: *cond, a: *a, b: *b, offset: 5 };
                        encode_into(&insn, &mut units)?;
                        encode_into(&Instruction::Goto32 { offset: 6 }, &mut units)?;
                        let off = dest(target) - (pc + 5);
                        encode_into(&Instruction::Goto32 { offset: off as i32 }, &mut units)?;
                    } else {
                        let offset = (dest(target) - pc) as i16;
                        encode_into(&Instruction::If { cond: *cond, a: *a, b: *b, offset }, &mut units)?;
                    }
                }
                Item::Goto { target, .. } => {
                    let off = dest(target) - pc;
                    let insn = if long[i] {
                        Instruction::Goto32 { offset: off as i32 }
                    } else {
                        Instruction::Goto { offset: off as i16 }
                    };
                    encode_into(&insn, &mut units)?;
                }
            }
        }
        Ok(Assembled { units, labels, item_pcs: pcs })
    }
}
