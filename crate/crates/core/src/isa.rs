//! Instruction set definitions.
//!
//! Opcode byte values follow the Dalvik numbering for the operations they
//! mirror. `INVOKE_IDX` has no Dalvik counterpart and uses `0xf0`.

use std::fmt;

use arrayvec::ArrayVec;

/// One 16-bit element of a method body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(transparent)]
pub struct CodeUnit(pub u16);

impl CodeUnit {
    pub const fn low(self) -> u8 {
        (self.0 & 0xff) as u8
    }

    pub const fn high(self) -> u8 {
        (self.0 >> 8) as u8
    }
}

impl fmt::Display for CodeUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04x}", self.0)
    }
}

/// Virtual register number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reg(pub u8);

impl Reg {
    pub const fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Argument registers of an invoke. At most four, each in a 4-bit field.
pub type ArgList = ArrayVec<Reg, 4>;

/// Comparison performed by the two-register conditional branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cond {
    Eq,
    Ne,
    Lt,
    Ge,
    Gt,
    Le,
}

impl Cond {
    pub const ALL: [Cond; 6] = [Cond::Eq, Cond::Ne, Cond::Lt, Cond::Ge, Cond::Gt, Cond::Le];

    pub fn holds(self, a: i32, b: i32) -> bool {
        match self {
            Cond::Eq => a == b,
            Cond::Ne => a != b,
            Cond::Lt => a < b,
            Cond::Ge => a >= b,
            Cond::Gt => a > b,
            Cond::Le => a <= b,
        }
    }

    pub fn opcode(self) -> Opcode {
        match self {
            Cond::Eq => Opcode::IfEq,
            Cond::Ne => Opcode::IfNe,
            Cond::Lt => Opcode::IfLt,
            Cond::Ge => Opcode::IfGe,
            Cond::Gt => Opcode::IfGt,
            Cond::Le => Opcode::IfLe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Opcode {
    Nop,
    Move,
    MoveResult,
    ReturnVoid,
    Return,
    Const,
    ConstString,
    Goto,
    Goto32,
    IfEq,
    IfNe,
    IfLt,
    IfGe,
    IfGt,
    IfLe,
    SGet,
    SPut,
    Invoke,
    AddIntLit8,
    InvokeIdx,
}

impl Opcode {
    pub const ALL: [Opcode; 20] = [
        Opcode::Nop,
        Opcode::Move,
        Opcode::MoveResult,
        Opcode::ReturnVoid,
        Opcode::Return,
        Opcode::Const,
        Opcode::ConstString,
        Opcode::Goto,
        Opcode::Goto32,
        Opcode::IfEq,
        Opcode::IfNe,
        Opcode::IfLt,
        Opcode::IfGe,
        Opcode::IfGt,
        Opcode::IfLe,
        Opcode::SGet,
        Opcode::SPut,
        Opcode::Invoke,
        Opcode::AddIntLit8,
        Opcode::InvokeIdx,
    ];

    pub const fn byte(self) -> u8 {
        match self {
            Opcode::Nop => 0x00,
            Opcode::Move => 0x01,
            Opcode::MoveResult => 0x0a,
            Opcode::ReturnVoid => 0x0e,
            Opcode::Return => 0x0f,
            Opcode::Const => 0x13,
            Opcode::ConstString => 0x1a,
            Opcode::Goto => 0x29,
            Opcode::Goto32 => 0x2a,
            Opcode::IfEq => 0x32,
            Opcode::IfNe => 0x33,
            Opcode::IfLt => 0x34,
            Opcode::IfGe => 0x35,
            Opcode::IfGt => 0x36,
            Opcode::IfLe => 0x37,
            Opcode::SGet => 0x60,
            Opcode::SPut => 0x67,
            Opcode::Invoke => 0x6e,
            Opcode::AddIntLit8 => 0xd8,
            Opcode::InvokeIdx => 0xf0,
        }
    }

    pub fn from_byte(byte: u8) -> Option<Opcode> {
        Opcode::ALL.iter().copied().find(|op| op.byte() == byte)
    }

    /// Encoded length in code units. Fixed per opcode.
    pub const fn width(self) -> usize {
        match self {
            Opcode::Nop | Opcode::Move | Opcode::MoveResult | Opcode::ReturnVoid | Opcode::Return => 1,
            Opcode::Const
            | Opcode::ConstString
            | Opcode::Goto
            | Opcode::IfEq
            | Opcode::IfNe
            | Opcode::IfLt
            | Opcode::IfGe
            | Opcode::IfGt
            | Opcode::IfLe
            | Opcode::SGet
            | Opcode::SPut
            | Opcode::AddIntLit8 => 2,
            Opcode::Goto32 | Opcode::Invoke | Opcode::InvokeIdx => 3,
        }
    }

    pub const fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Nop => "nop",
            Opcode::Move => "move",
            Opcode::MoveResult => "move-result",
            Opcode::ReturnVoid => "return-void",
            Opcode::Return => "return",
            Opcode::Const => "const/16",
            Opcode::ConstString => "const-string",
            Opcode::Goto => "goto/16",
            Opcode::Goto32 => "goto/32",
            Opcode::IfEq => "if-eq",
            Opcode::IfNe => "if-ne",
            Opcode::IfLt => "if-lt",
            Opcode::IfGe => "if-ge",
            Opcode::IfGt => "if-gt",
            Opcode::IfLe => "if-le",
            Opcode::SGet => "sget",
            Opcode::SPut => "sput",
            Opcode::Invoke => "invoke",
            Opcode::AddIntLit8 => "add-int/lit8",
            Opcode::InvokeIdx => "invoke-idx",
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// A decoded instruction.
///
/// Branch offsets are signed displacements in code units relative to the
/// `dex_pc` of the branch itself. Pool operands are raw indices into the
/// owning container's pools.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Instruction {
    Nop,
    Const {
        dst: Reg,
        value: i16,
    },
    ConstString {
        dst: Reg,
        string: u16,
    },
    Move {
        dst: Reg,
        src: Reg,
    },
    AddIntLit8 {
        dst: Reg,
        src: Reg,
        lit: i8,
    },
    If {
        cond: Cond,
        a: Reg,
        b: Reg,
        offset: i16,
    },
    Goto {
        offset: i16,
    },
    Goto32 {
        offset: i32,
    },
    Invoke {
        method: u16,
        args: ArgList,
    },
    MoveResult {
        dst: Reg,
    },
    SGet {
        dst: Reg,
        field: u16,
    },
    SPut {
        src: Reg,
        field: u16,
    },
    ReturnVoid,
    Return {
        src: Reg,
    },
    /// Reflective call: invoke the `index`-th entry of the method table of
    /// the class of the object held in `obj`.
    InvokeIdx {
        obj: Reg,
        index: Reg,
        args: ArgList,
    },
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instruction::Nop => Opcode::Nop,
            Instruction::Const { .. } => Opcode::Const,
            Instruction::ConstString { .. } => Opcode::ConstString,
            Instruction::Move { .. } => Opcode::Move,
            Instruction::AddIntLit8 { .. } => Opcode::AddIntLit8,
            Instruction::If { cond, .. } => cond.opcode(),
            Instruction::Goto { .. } => Opcode::Goto,
            Instruction::Goto32 { .. } => Opcode::Goto32,
            Instruction::Invoke { .. } => Opcode::Invoke,
            Instruction::MoveResult { .. } => Opcode::MoveResult,
            Instruction::SGet { .. } => Opcode::SGet,
            Instruction::SPut { .. } => Opcode::SPut,
            Instruction::ReturnVoid => Opcode::ReturnVoid,
            Instruction::Return { .. } => Opcode::Return,
            Instruction::InvokeIdx { .. } => Opcode::InvokeIdx,
        }
    }

    pub fn width(&self) -> usize {
        self.opcode().width()
    }

    /// Branch displacement for `if-*`, `goto/16` and `goto/32`.
    pub fn branch_offset(&self) -> Option<i32> {
        match *self {
            Instruction::If { offset, .. } | Instruction::Goto { offset } => Some(offset as i32),
            Instruction::Goto32 { offset } => Some(offset),
            _ => None,
        }
    }

    pub fn is_conditional(&self) -> bool {
        matches!(self, Instruction::If { .. })
    }

    /// Whether control can continue at `pc + width` after this instruction.
    pub fn falls_through(&self) -> bool {
        !matches!(
            self,
            Instruction::Goto { .. }
                | Instruction::Goto32 { .. }
                | Instruction::ReturnVoid
                | Instruction::Return { .. }
        )
    }

    /// Every register the instruction reads or writes.
    pub fn registers(&self) -> Vec<Reg> {
        match self {
            Instruction::Nop | Instruction::Goto { .. } | Instruction::Goto32 { .. } | Instruction::ReturnVoid => {
                Vec::new()
            }
            Instruction::Const { dst, .. }
            | Instruction::ConstString { dst, .. }
            | Instruction::MoveResult { dst }
            | Instruction::SGet { dst, .. } => vec![*dst],
            Instruction::SPut { src, .. } | Instruction::Return { src } => vec![*src],
            Instruction::Move { dst, src } | Instruction::AddIntLit8 { dst, src, .. } => {
                vec![*dst, *src]
            }
            Instruction::If { a, b, .. } => vec![*a, *b],
            Instruction::Invoke { args, .. } => args.to_vec(),
            Instruction::InvokeIdx { obj, index, args } => {
                let mut regs = vec![*obj, *index];
                regs.extend(args.iter().copied());
                regs
            }
        }
    }

    /// Register written by the instruction, if any.
    pub fn destination(&self) -> Option<Reg> {
        match self {
            Instruction::Const { dst, .. }
            | Instruction::ConstString { dst, .. }
            | Instruction::Move { dst, .. }
            | Instruction::AddIntLit8 { dst, .. }
            | Instruction::MoveResult { dst }
            | Instruction::SGet { dst, .. } => Some(*dst),
            _ => None,
        }
    }
}

fn write_args(f: &mut fmt::Formatter<'_>, args: &ArgList) -> fmt::Result {
    f.write_str("{")?;
    for (i, r) in args.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{r}")?;
    }
    f.write_str("}")
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.opcode();
        match self {
            Instruction::Nop | Instruction::ReturnVoid => write!(f, "{op}"),
            Instruction::Const { dst, value } => write!(f, "{op} {dst}, #{value}"),
            Instruction::ConstString { dst, string } => write!(f, "{op} {dst}, string@{string}"),
            Instruction::Move { dst, src } => write!(f, "{op} {dst}, {src}"),
            Instruction::AddIntLit8 { dst, src, lit } => write!(f, "{op} {dst}, {src}, #{lit}"),
            Instruction::If { a, b, offset, .. } => write!(f, "{op} {a}, {b}, {offset:+}"),
            Instruction::Goto { offset } => write!(f, "{op} {offset:+}"),
            Instruction::Goto32 { offset } => write!(f, "{op} {offset:+}"),
            Instruction::Invoke { method, args } => {
                write!(f, "{op} ")?;
                write_args(f, args)?;
                write!(f, ", method@{method}")
            }
            Instruction::MoveResult { dst } => write!(f, "{op} {dst}"),
            Instruction::SGet { dst, field } => write!(f, "{op} {dst}, field@{field}"),
            Instruction::SPut { src, field } => write!(f, "{op} {src}, field@{field}"),
            Instruction::Return { src } => write!(f, "{op} {src}"),
            Instruction::InvokeIdx { obj, index, args } => {
                write!(f, "{op} {obj}[{index}] ")?;
                write_args(f, args)
            }
        }
    }
}
