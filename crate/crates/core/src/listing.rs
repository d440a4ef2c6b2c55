//! Smali-like text listings, with pool operands resolved to names.

use std::fmt::Write;

use crate::codec::decode_instruction;
use crate::container::{Container, MethodKind, TaintRole};
use crate::isa::Instruction;

fn args(regs: &[crate::isa::Reg]) -> String {
    let v: Vec<String> = regs.iter().map(|r| r.to_string()).collect();
    format!("{{{}}}", v.join(", "))
}

/// Renders one instruction at `pc` with names looked up in `c`.
pub fn render_instruction(c: &Container, pc: usize, insn: &Instruction) -> String {
    let op = insn.opcode();
    let target = |off: i32| format!("{:04x}", pc as i64 + off as i64);
    match insn {
        Instruction::ConstString { dst, string } => match c.strings.get(*string as usize) {
            Some(s) => format!("{op} {dst}, {s:?}"),
            None => format!("{op} {dst}, string@{string}"),
        },
        Instruction::If { a, b, offset, .. } => format!("{op} {a}, {b}, {}", target(*offset as i32)),
        Instruction::Goto { offset } => format!("{op} {}", target(*offset as i32)),
        Instruction::Goto32 { offset } => format!("{op} {}", target(*offset)),
        Instruction::Invoke { method, args: a } if (*method as usize) < c.methods.len() => {
            format!("{op} {}, {}", args(a), c.method_ref(*method as u32))
        }
        Instruction::SGet { dst, field } if (*field as usize) < c.fields.len() => {
            format!("{op} {dst}, {}", c.field_ref(*field as u32))
        }
        Instruction::SPut { src, field } if (*field as usize) < c.fields.len() => {
            format!("{op} {src}, {}", c.field_ref(*field as u32))
        }
        other => other.to_string(),
    }
}

pub fn method_listing(c: &Container, m: u32) -> String {
    let def = &c.methods[m as usize];
    let mut out = String::new();
    let kind = match def.kind {
        MethodKind::Bytecode => "",
        MethodKind::Native => " native",
        MethodKind::Stub => " stub",
    };
    let role = match def.role {
        TaintRole::Neither => "",
        TaintRole::Source => " source",
        TaintRole::Sink => " sink",
    };
    let _ = writeln!(out, ".method{kind}{role} {}", c.method_ref(m));
    if def.kind == MethodKind::Bytecode {
        let _ = writeln!(out, "    .registers {}", def.registers);
        let mut pc = 0;
        while pc < def.body.len() {
            match decode_instruction(&def.body, pc) {
                Ok((insn, len)) => {
                    let _ = writeln!(out, "    {pc:04x}: {}", render_instruction(c, pc, &insn));
                    pc += len;
                }
                Err(e) => {
                    let _ = writeln!(out, "    {pc:04x}: <{e}>");
                    break;
                }
            }
        }
    }
    out.push_str(".end method\n");
    out
}

/// Listing of every class and its methods, then any method not attached to
/// a class record.
pub fn container_listing(c: &Container) -> String {
    let mut out = String::new();
    let mut listed = vec![false; c.methods.len()];
    for class in &c.classes {
        let _ = write!(out, ".class {}", c.type_descriptor(class.ty));
        if let Some(s) = class.super_ty {
            let _ = write!(out, " extends {}", c.type_descriptor(s));
        }
        out.push('\n');
        for f in &class.fields {
            let _ = writeln!(out, ".field {}", c.field_ref(*f));
        }
        for m in &class.methods {
            listed[*m as usize] = true;
            out.push_str(&method_listing(c, *m));
        }
        out.push_str(".end class\n\n");
    }
    for (m, done) in listed.iter().enumerate() {
        if !done {
            out.push_str(&method_listing(c, m as u32));
        }
    }
    let _ = writeln!(out, ".entry {}", c.method_ref(c.entry));
    out
}
