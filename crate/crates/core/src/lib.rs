//! Core data model for the mini-DEX toolchain.
//!
//! A method body is an array of 16-bit [`CodeUnit`]s. Each [`Instruction`]
//! occupies a fixed number of units (1 to 5) determined by its opcode, and
//! every multi-unit field is little-endian. The binary [`Container`] bundles
//! the string, type, proto, field, method and class pools together with the
//! method bodies. See `docs/format.md` in the repository for the byte layout.

pub mod asm;
pub mod builder;
pub mod codec;
pub mod container;
pub mod format;
pub mod isa;
pub mod listing;
pub mod value;

pub use asm::{AsmError, Assembled, Assembler, Label};
pub use builder::ContainerBuilder;
pub use codec::{decode_body, decode_instruction, encode_instruction, DecodeError, EncodeError};
pub use container::{
    ClassDef, Container, ContainerError, FieldDef, FieldInit, MethodDef, MethodKind, Proto, Section, TaintRole,
};
pub use format::{emit_container, parse_container};
pub use isa::{ArgList, CodeUnit, Cond, Instruction, Opcode, Reg};
pub use value::{StaticFieldTable, Value};
