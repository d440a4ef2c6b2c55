//! In-memory container model and its validation rules.

use std::collections::HashSet;
use std::fmt;
use std::hash::Hash;

use thiserror::Error;

use crate::codec::{decode_body, DecodeError};
use crate::isa::{CodeUnit, Instruction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Section {
    Strings,
    Types,
    Protos,
    Fields,
    Methods,
    Classes,
    Entry,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Section::Strings => "strings",
            Section::Types => "types",
            Section::Protos => "protos",
            Section::Fields => "fields",
            Section::Methods => "methods",
            Section::Classes => "classes",
            Section::Entry => "entry",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContainerError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("container truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("{count} trailing bytes after container end")]
    TrailingBytes { count: usize },
    #[error("malformed {what} at byte {offset}")]
    Malformed { what: &'static str, offset: usize },
    #[error("index {index} out of range in {section}")]
    IndexOutOfRange { section: Section, index: u64 },
    #[error("duplicate entry {index} in {section} pool")]
    DuplicatePoolEntry { section: Section, index: u32 },
    #[error("body of method {method} does not decode: {source}")]
    UndecodableBody {
        method: u32,
        #[source]
        source: DecodeError,
    },
    #[error("method {method}: branch at pc {pc} targets {target}, not an instruction boundary")]
    BadBranchTarget { method: u32, pc: usize, target: i64 },
    #[error("method {method}: register v{reg} at pc {pc} exceeds register count")]
    RegisterOutOfRange { method: u32, pc: usize, reg: u8 },
    #[error("method {method}: {reason}")]
    BadMethod { method: u32, reason: &'static str },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

/// Method signature: return type and parameter types (type pool indices).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Proto {
    pub ret: u32,
    pub params: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldInit {
    None,
    Int(i32),
    Str(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FieldDef {
    /// Declaring class, as a type pool index.
    pub class: u32,
    pub ty: u32,
    pub name: u32,
    pub is_static: bool,
    pub init: FieldInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodKind {
    Bytecode,
    Native,
    /// Captured but never executed; carries no body.
    Stub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TaintRole {
    #[default]
    Neither,
    Source,
    Sink,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MethodDef {
    /// Declaring class, as a type pool index.
    pub class: u32,
    pub proto: u32,
    pub name: u32,
    pub kind: MethodKind,
    pub role: TaintRole,
    pub registers: u16,
    pub body: Vec<CodeUnit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassDef {
    pub ty: u32,
    pub super_ty: Option<u32>,
    pub fields: Vec<u32>,
    /// Method table: the order is significant for `invoke-idx`.
    pub methods: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Container {
    pub strings: Vec<String>,
    /// Type descriptors, as string pool indices.
    pub types: Vec<u32>,
    pub protos: Vec<Proto>,
    pub fields: Vec<FieldDef>,
    pub methods: Vec<MethodDef>,
    pub classes: Vec<ClassDef>,
    pub entry: u32,
}

fn check(section: Section, index: u32, len: usize) -> Result<(), ContainerError> {
    if (index as usize) < len {
        Ok(())
    } else {
        Err(ContainerError::IndexOutOfRange { section, index: index as u64 })
    }
}

fn check_unique<T: Eq + Hash>(section: Section, items: &[T]) -> Result<(), ContainerError> {
    let mut seen = HashSet::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        if !seen.insert(item) {
            return Err(ContainerError::DuplicatePoolEntry { section, index: i as u32 });
        }
    }
    Ok(())
}

impl Container {
    pub fn string(&self, idx: u32) -> &str {
        &self.strings[idx as usize]
    }

    pub fn type_descriptor(&self, ty: u32) -> &str {
        self.string(self.types[ty as usize])
    }

    pub fn method_name(&self, m: u32) -> &str {
        self.string(self.methods[m as usize].name)
    }

    pub fn method_class(&self, m: u32) -> &str {
        self.type_descriptor(self.methods[m as usize].class)
    }

    /// `Lpkg/Class;->name`, the key natives are registered under.
    pub fn method_key(&self, m: u32) -> String {
        format!("{}->{}", self.method_class(m), self.method_name(m))
    }

    /// Fully qualified method reference with signature,
    /// e.g. `Lcom/test/Main;->sink(Ljava/lang/String;)V`.
    pub fn method_ref(&self, m: u32) -> String {
        let method = &self.methods[m as usize];
        format!("{}{}", self.method_key(m), self.proto_signature(method.proto))
    }

    pub fn proto_signature(&self, proto: u32) -> String {
        let p = &self.protos[proto as usize];
        let params: String = p.params.iter().map(|t| self.type_descriptor(*t)).collect();
        format!("({}){}", params, self.type_descriptor(p.ret))
    }

    pub fn field_ref(&self, f: u32) -> String {
        let field = &self.fields[f as usize];
        format!("{}->{}:{}", self.type_descriptor(field.class), self.string(field.name), self.type_descriptor(field.ty))
    }

    pub fn arity(&self, m: u32) -> usize {
        self.protos[self.methods[m as usize].proto as usize].params.len()
    }

    pub fn returns_void(&self, m: u32) -> bool {
        let ret = self.protos[self.methods[m as usize].proto as usize].ret;
        self.type_descriptor(ret) == "V"
    }

    pub fn find_string(&self, s: &str) -> Option<u32> {
        self.strings.iter().position(|x| x == s).map(|i| i as u32)
    }

    pub fn find_type(&self, descriptor: &str) -> Option<u32> {
        self.types.iter().position(|s| self.string(*s) == descriptor).map(|i| i as u32)
    }

    /// Class record whose type has the given descriptor.
    pub fn find_class(&self, descriptor: &str) -> Option<u32> {
        self.classes.iter().position(|c| self.type_descriptor(c.ty) == descriptor).map(|i| i as u32)
    }

    pub fn class_of_type(&self, ty: u32) -> Option<u32> {
        self.classes.iter().position(|c| c.ty == ty).map(|i| i as u32)
    }

    /// Method with the given `Lpkg/Class;->name` key.
    pub fn find_method(&self, key: &str) -> Option<u32> {
        (0..self.methods.len() as u32).find(|m| self.method_key(*m) == key)
    }

    pub fn find_field(&self, class: &str, name: &str) -> Option<u32> {
        self.fields
            .iter()
            .position(|f| self.type_descriptor(f.class) == class && self.string(f.name) == name)
            .map(|i| i as u32)
    }

    /// Checks every container invariant: index ranges, pool deduplication,
    /// gap-free decodable bodies with in-range operands and branch targets.
    pub fn validate(&self) -> Result<(), ContainerError> {
        use Section::*;
        let ns = self.strings.len();
        let nt = self.types.len();
        let np = self.protos.len();
        let nf = self.fields.len();
        let nm = self.methods.len();

        for t in &self.types {
            check(Strings, *t, ns)?;
        }
        for p in &self.protos {
            check(Types, p.ret, nt)?;
            for t in &p.params {
                check(Types, *t, nt)?;
            }
        }
        for f in &self.fields {
            check(Types, f.class, nt)?;
            check(Types, f.ty, nt)?;
            check(Strings, f.name, ns)?;
            if let FieldInit::Str(s) = f.init {
                check(Strings, s, ns)?;
            }
        }
        for m in &self.methods {
            check(Types, m.class, nt)?;
            check(Protos, m.proto, np)?;
            check(Strings, m.name, ns)?;
        }
        for c in &self.classes {
            check(Types, c.ty, nt)?;
            if let Some(s) = c.super_ty {
                check(Types, s, nt)?;
            }
            for f in &c.fields {
                check(Fields, *f, nf)?;
            }
            for m in &c.methods {
                check(Methods, *m, nm)?;
            }
        }
        check(Entry, self.entry, nm)?;

        check_unique(Strings, &self.strings)?;
        check_unique(Types, &self.types)?;
        check_unique(Protos, &self.protos)?;
        check_unique(Fields, &self.fields)?;
        check_unique(Methods, &self.methods)?;
        check_unique(Classes, &self.classes)?;

        for idx in 0..nm {
            self.validate_method(idx as u32)?;
        }
        Ok(())
    }

    fn validate_method(&self, idx: u32) -> Result<(), ContainerError> {
        let m = &self.methods[idx as usize];
        if m.kind != MethodKind::Bytecode {
            if !m.body.is_empty() {
                return Err(ContainerError::BadMethod { method: idx, reason: "non-bytecode method has a body" });
            }
            return Ok(());
        }
        let arity = self.protos[m.proto as usize].params.len();
        if (m.registers as usize) < arity {
            return Err(ContainerError::BadMethod { method: idx, reason: "fewer registers than parameters" });
        }
        let decoded = decode_body(&m.body).map_err(|source| ContainerError::UndecodableBody { method: idx, source })?;
        let boundaries: HashSet<usize> = decoded.iter().map(|(pc, _)| *pc).collect();
        for (pc, insn) in &decoded {
            for r in insn.registers() {
                if r.0 as u16 >= m.registers {
                    return Err(ContainerError::RegisterOutOfRange { method: idx, pc: *pc, reg: r.0 });
                }
            }
            match insn {
                Instruction::ConstString { string, .. } => check(Section::Strings, *string as u32, self.strings.len())?,
                Instruction::SGet { field, .. } | Instruction::SPut { field, .. } => {
                    check(Section::Fields, *field as u32, self.fields.len())?;
                    if !self.fields[*field as usize].is_static {
                        return Err(ContainerError::BadMethod {
                            method: idx,
                            reason: "static access to instance field",
                        });
                    }
                }
                Instruction::Invoke { method, .. } => check(Section::Methods, *method as u32, self.methods.len())?,
                _ => {}
            }
            if let Some(off) = insn.branch_offset() {
                let target = *pc as i64 + off as i64;
                if target < 0 || !boundaries.contains(&(target as usize)) {
                    return Err(ContainerError::BadBranchTarget { method: idx, pc: *pc, target });
                }
            }
        }
        Ok(())
    }
}
