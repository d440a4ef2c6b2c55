//! Bit-exact encoding of instructions into code units.
//!
//! Layouts (unit 0 low byte is always the opcode, `A`/`B` are register
//! fields, `|` separates code units, reserved bits must be zero):
//!
//! | format | opcodes                        | units                           |
//! |--------|--------------------------------|---------------------------------|
//! | 10x    | nop, return-void               | `00\|op`                        |
//! | 11x    | move-result, return            | `AA\|op`                        |
//! | 12x    | move                           | `B\|A\|op`                      |
//! | 21s    | const/16                       | `AA\|op  BBBB`                  |
//! | 21c    | const-string, sget, sput       | `AA\|op  BBBB`                  |
//! | 22b    | add-int/lit8                   | `AA\|op  CC\|BB`                |
//! | 22t    | if-*                           | `B\|A\|op  CCCC`                |
//! | 20t    | goto/16                        | `00\|op  AAAA`                  |
//! | 30t    | goto/32                        | `00\|op  AAAAlo  AAAAhi`        |
//! | 35c    | invoke                         | `N\|0\|op  BBBB  F\|E\|D\|C`    |
//! | 3ri    | invoke-idx                     | `N\|0\|op  II\|OO  F\|E\|D\|C`  |

use thiserror::Error;

use crate::isa::{ArgList, CodeUnit, Cond, Instruction, Opcode, Reg};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unknown opcode 0x{byte:02x} at pc {pc}")]
    UnknownOpcode { pc: usize, byte: u8 },
    #[error("truncated instruction at pc {pc}")]
    TruncatedInstruction { pc: usize },
    #[error("malformed instruction at pc {pc}: {reason}")]
    Malformed { pc: usize, reason: &'static str },
    #[error("pc {pc} outside body of {len} units")]
    PcOutOfRange { pc: usize, len: usize },
}

impl DecodeError {
    pub fn pc(&self) -> usize {
        match *self {
            DecodeError::UnknownOpcode { pc, .. }
            | DecodeError::TruncatedInstruction { pc }
            | DecodeError::Malformed { pc, .. }
            | DecodeError::PcOutOfRange { pc, .. } => pc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("{opcode}: operand {operand} = {value} exceeds its field width")]
    OperandOverflow { opcode: Opcode, operand: &'static str, value: i64 },
}

/// Decodes the instruction starting at `pc`, returning it with its length.
pub fn decode_instruction(body: &[CodeUnit], pc: usize) -> Result<(Instruction, usize), DecodeError> {
    let first = *body.get(pc).ok_or(DecodeError::PcOutOfRange { pc, len: body.len() })?;
    let opcode = Opcode::from_byte(first.low()).ok_or(DecodeError::UnknownOpcode { pc, byte: first.low() })?;
    let width = opcode.width();
    if pc + width > body.len() {
        return Err(DecodeError::TruncatedInstruction { pc });
    }
    let units = &body[pc..pc + width];
    let hi = first.high();
    let nib_a = Reg(hi & 0x0f);
    let nib_b = Reg(hi >> 4);
    let aa = Reg(hi);
    let malformed = |reason| DecodeError::Malformed { pc, reason };

    let insn = match opcode {
        Opcode::Nop | Opcode::ReturnVoid | Opcode::Goto | Opcode::Goto32 if hi != 0 => {
            return Err(malformed("reserved byte set"))
        }
        Opcode::Nop => Instruction::Nop,
        Opcode::ReturnVoid => Instruction::ReturnVoid,
        Opcode::MoveResult => Instruction::MoveResult { dst: aa },
        Opcode::Return => Instruction::Return { src: aa },
        Opcode::Move => Instruction::Move { dst: nib_a, src: nib_b },
        Opcode::Const => Instruction::Const { dst: aa, value: units[1].0 as i16 },
        Opcode::ConstString => Instruction::ConstString { dst: aa, string: units[1].0 },
        Opcode::SGet => Instruction::SGet { dst: aa, field: units[1].0 },
        Opcode::SPut => Instruction::SPut { src: aa, field: units[1].0 },
        Opcode::AddIntLit8 => Instruction::AddIntLit8 { dst: aa, src: Reg(units[1].low()), lit: units[1].high() as i8 },
        Opcode::IfEq | Opcode::IfNe | Opcode::IfLt | Opcode::IfGe | Opcode::IfGt | Opcode::IfLe => {
            let cond = match opcode {
                Opcode::IfEq => Cond::Eq,
                Opcode::IfNe => Cond::Ne,
                Opcode::IfLt => Cond::Lt,
                Opcode::IfGe => Cond::Ge,
                Opcode::IfGt => Cond::Gt,
                _ => Cond::Le,
            };
            Instruction::If { cond, a: nib_a, b: nib_b, offset: units[1].0 as i16 }
        }
        Opcode::Goto => Instruction::Goto { offset: units[1].0 as i16 },
        Opcode::Goto32 => Instruction::Goto32 { offset: (units[1].0 as u32 | (units[2].0 as u32) << 16) as i32 },
        Opcode::Invoke | Opcode::InvokeIdx => {
            if hi & 0x0f != 0 {
                return Err(malformed("reserved nibble set"));
            }
            let count = (hi >> 4) as usize;
            if count > 4 {
                return Err(malformed("more than four argument registers"));
            }
            let packed = units[2].0;
            let mut args = ArgList::new();
            for i in 0..4 {
                let nibble = ((packed >> (4 * i)) & 0xf) as u8;
                if i < count {
                    args.push(Reg(nibble));
                } else if nibble != 0 {
                    return Err(malformed("unused argument nibble set"));
                }
            }
            if opcode == Opcode::Invoke {
                Instruction::Invoke { method: units[1].0, args }
            } else {
                Instruction::InvokeIdx { obj: Reg(units[1].low()), index: Reg(units[1].high()), args }
            }
        }
    };
    Ok((insn, width))
}

fn nibble(opcode: Opcode, operand: &'static str, reg: Reg) -> Result<u16, EncodeError> {
    if reg.0 > 0x0f {
        return Err(EncodeError::OperandOverflow { opcode, operand, value: reg.0 as i64 });
    }
    Ok(reg.0 as u16)
}

fn unit0(opcode: Opcode, high: u16) -> CodeUnit {
    CodeUnit(opcode.byte() as u16 | high << 8)
}

/// Encodes one instruction, appending its units to `out`.
pub fn encode_into(insn: &Instruction, out: &mut Vec<CodeUnit>) -> Result<(), EncodeError> {
    let op = insn.opcode();
    match insn {
        Instruction::Nop | Instruction::ReturnVoid => out.push(unit0(op, 0)),
        Instruction::MoveResult { dst: r } | Instruction::Return { src: r } => out.push(unit0(op, r.0 as u16)),
        Instruction::Move { dst, src } => {
            let a = nibble(op, "dst", *dst)?;
            let b = nibble(op, "src", *src)?;
            out.push(unit0(op, a | b << 4));
        }
        Instruction::Const { dst, value } => {
            out.extend([unit0(op, dst.0 as u16), CodeUnit(*value as u16)]);
        }
        Instruction::ConstString { dst: r, string: idx }
        | Instruction::SGet { dst: r, field: idx }
        | Instruction::SPut { src: r, field: idx } => {
            out.extend([unit0(op, r.0 as u16), CodeUnit(*idx)]);
        }
        Instruction::AddIntLit8 { dst, src, lit } => {
            out.extend([unit0(op, dst.0 as u16), CodeUnit(src.0 as u16 | (*lit as u8 as u16) << 8)]);
        }
        Instruction::If { a, b, offset, .. } => {
            let a = nibble(op, "a", *a)?;
            let b = nibble(op, "b", *b)?;
            out.extend([unit0(op, a | b << 4), CodeUnit(*offset as u16)]);
        }
        Instruction::Goto { offset } => out.extend([unit0(op, 0), CodeUnit(*offset as u16)]),
        Instruction::Goto32 { offset } => {
            let raw = *offset as u32;
            out.extend([unit0(op, 0), CodeUnit(raw as u16), CodeUnit((raw >> 16) as u16)]);
        }
        Instruction::Invoke { method, args } => {
            let packed = pack_args(op, args)?;
            out.extend([unit0(op, (args.len() as u16) << 4), CodeUnit(*method), CodeUnit(packed)]);
        }
        Instruction::InvokeIdx { obj, index, args } => {
            let packed = pack_args(op, args)?;
            out.extend([
                unit0(op, (args.len() as u16) << 4),
                CodeUnit(obj.0 as u16 | (index.0 as u16) << 8),
                CodeUnit(packed),
            ]);
        }
    }
    Ok(())
}

fn pack_args(op: Opcode, args: &ArgList) -> Result<u16, EncodeError> {
    let mut packed = 0u16;
    for (i, r) in args.iter().enumerate() {
        packed |= nibble(op, "arg", *r)? << (4 * i);
    }
    Ok(packed)
}

pub fn encode_instruction(insn: &Instruction) -> Result<Vec<CodeUnit>, EncodeError> {
    let mut out = Vec::with_capacity(insn.width());
    encode_into(insn, &mut out)?;
    Ok(out)
}

/// Decodes a whole body from pc 0, requiring every unit to belong to
/// exactly one instruction.
pub fn decode_body(body: &[CodeUnit]) -> Result<Vec<(usize, Instruction)>, DecodeError> {
    let mut out = Vec::new();
    let mut pc = 0;
    while pc < body.len() {
        let (insn, len) = decode_instruction(body, pc)?;
        out.push((pc, insn));
        pc += len;
    }
    Ok(out)
}
