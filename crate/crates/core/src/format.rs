//! Binary container encoding. All integers are little-endian.
//!
//! ```text
//! header   "MDX0" u32:version(=1)
//! strings  u32:count { u32:len utf8[len] }
//! types    u32:count { u32:string }
//! protos   u32:count { u32:ret u32:n u32[n]:params }
//! fields   u32:count { u32:class u32:type u32:name u8:flags u8:init [i32|u32] }
//! methods  u32:count { u32:class u32:proto u32:name u8:kind u8:role u16:registers
//!                      u32:units u16[units] }
//! classes  u32:count { u32:type u32:super u32:n u32[n]:fields u32:m u32[m]:methods }
//! entry    u32:method
//! ```
//!
//! `super` is `0xffff_ffff` when absent. Field flags bit 0 marks a static
//! field; init tag 0 = none, 1 = int payload, 2 = string payload.

use crate::container::{
    ClassDef, Container, ContainerError, FieldDef, FieldInit, MethodDef, MethodKind, Proto, TaintRole,
};
use crate::isa::CodeUnit;

pub const MAGIC: &[u8; 4] = b"MDX0";
pub const VERSION: u32 = 1;
const NO_SUPER: u32 = u32::MAX;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.bytes.len() - self.pos < n {
            return Err(ContainerError::Truncated { offset: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Reads an element count, rejecting counts that cannot fit in the
    /// remaining input given a minimum element size.
    fn count(&mut self, min_elem: usize) -> Result<usize, ContainerError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_elem) > self.bytes.len() - self.pos {
            return Err(ContainerError::Truncated { offset: self.bytes.len() });
        }
        Ok(n)
    }

    fn u32_list(&mut self) -> Result<Vec<u32>, ContainerError> {
        let n = self.count(4)?;
        (0..n).map(|_| self.u32()).collect()
    }
}

/// Parses and validates a container.
pub fn parse_container(bytes: &[u8]) -> Result<Container, ContainerError> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    r.pos = 4;
    let version = r.u32()?;
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }

    let mut c = Container::default();
    let n = r.count(4)?;
    for _ in 0..n {
        let len = r.u32()? as usize;
        let offset = r.pos;
        let raw = r.take(len)?;
        let s = std::str::from_utf8(raw).map_err(|_| ContainerError::Malformed { what: "utf-8 string", offset })?;
        c.strings.push(s.to_owned());
    }
    c.types = r.u32_list()?;
    let n = r.count(8)?;
    for _ in 0..n {
        let ret = r.u32()?;
        let params = r.u32_list()?;
        c.protos.push(Proto { ret, params });
    }
    let n = r.count(14)?;
    for _ in 0..n {
        let class = r.u32()?;
        let ty = r.u32()?;
        let name = r.u32()?;
        let offset = r.pos;
        let flags = r.u8()?;
        if flags & !1 != 0 {
            return Err(ContainerError::Malformed { what: "field flags", offset });
        }
        let offset = r.pos;
        let init = match r.u8()? {
            0 => FieldInit::None,
            1 => FieldInit::Int(r.u32()? as i32),
            2 => FieldInit::Str(r.u32()?),
            _ => return Err(ContainerError::Malformed { what: "field init tag", offset }),
        };
        c.fields.push(FieldDef { class, ty, name, is_static: flags & 1 == 1, init });
    }
    let n = r.count(20)?;
    for _ in 0..n {
        let class = r.u32()?;
        let proto = r.u32()?;
        let name = r.u32()?;
        let offset = r.pos;
        let kind = match r.u8()? {
            0 => MethodKind::Bytecode,
            1 => MethodKind::Native,
            2 => MethodKind::Stub,
            _ => return Err(ContainerError::Malformed { what: "method kind", offset }),
        };
        let offset = r.pos;
        let role = match r.u8()? {
            0 => TaintRole::Neither,
            1 => TaintRole::Source,
            2 => TaintRole::Sink,
            _ => return Err(ContainerError::Malformed { what: "method role", offset }),
        };
        let registers = r.u16()?;
        let units = r.count(2)?;
        let body = (0..units).map(|_| r.u16().map(CodeUnit)).collect::<Result<_, _>>()?;
        c.methods.push(MethodDef { class, proto, name, kind, role, registers, body });
    }
    let n = r.count(16)?;
    for _ in 0..n {
        let ty = r.u32()?;
        let sup = r.u32()?;
        let fields = r.u32_list()?;
        let methods = r.u32_list()?;
        c.classes.push(ClassDef { ty, super_ty: (sup != NO_SUPER).then_some(sup), fields, methods });
    }
    c.entry = r.u32()?;
    if r.pos != bytes.len() {
        return Err(ContainerError::TrailingBytes { count: bytes.len() - r.pos });
    }
    c.validate()?;
    Ok(c)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, n: usize) {
    put_u32(out, u32::try_from(n).expect("pool larger than u32::MAX"));
}

fn put_list(out: &mut Vec<u8>, items: &[u32]) {
    put_len(out, items.len());
    for v in items {
        put_u32(out, *v);
    }
}

/// Serializes a container. The output is a pure function of the input.
pub fn emit_container(c: &Container) -> Result<Vec<u8>, ContainerError> {
    c.validate().map_err(|e| ContainerError::InvariantViolation(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);

    put_len(&mut out, c.strings.len());
    for s in &c.strings {
        put_len(&mut out, s.len());
        out.extend_from_slice(s.as_bytes());
    }
    put_list(&mut out, &c.types);
    put_len(&mut out, c.protos.len());
    for p in &c.protos {
        put_u32(&mut out, p.ret);
        put_list(&mut out, &p.params);
    }
    put_len(&mut out, c.fields.len());
    for f in &c.fields {
        put_u32(&mut out, f.class);
        put_u32(&mut out, f.ty);
        put_u32(&mut out, f.name);
        out.push(f.is_static as u8);
        match f.init {
            FieldInit::None => out.push(0),
            FieldInit::Int(v) => {
                out.push(1);
                put_u32(&mut out, v as u32);
            }
            FieldInit::Str(s) => {
                out.push(2);
                put_u32(&mut out, s);
            }
        }
    }
    put_len(&mut out, c.methods.len());
    for m in &c.methods {
        put_u32(&mut out, m.class);
        put_u32(&mut out, m.proto);
        put_u32(&mut out, m.name);
        out.push(match m.kind {
            MethodKind::Bytecode => 0,
            MethodKind::Native => 1,
            MethodKind::Stub => 2,
        });
        out.push(match m.role {
            TaintRole::Neither => 0,
            TaintRole::Source => 1,
            TaintRole::Sink => 2,
        });
        out.extend_from_slice(&m.registers.to_le_bytes());
        put_len(&mut out, m.body.len());
        for u in &m.body {
            out.extend_from_slice(&u.0.to_le_bytes());
        }
    }
    put_len(&mut out, c.classes.len());
    for cl in &c.classes {
        put_u32(&mut out, cl.ty);
        put_u32(&mut out, cl.super_ty.unwrap_or(NO_SUPER));
        put_list(&mut out, &cl.fields);
        put_list(&mut out, &cl.methods);
    }
    put_u32(&mut out, c.entry);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::container::Section;

    fn minimal() -> Container {
        Container {
            strings: vec!["LMain;".into(), "V".into(), "main".into()],
            types: vec![0, 1],
            protos: vec![Proto { ret: 1, params: vec![] }],
            fields: vec![],
            methods: vec![MethodDef {
                class: 0,
                proto: 0,
                name: 2,
                kind: MethodKind::Bytecode,
                role: TaintRole::Neither,
                registers: 0,
                body: vec![],
            }],
            classes: vec![],
            entry: 0,
        }
    }

    #[test]
    fn minimal_container_is_valid() {
        let c = minimal();
        let bytes = emit_container(&c).unwrap();
        assert_eq!(&bytes[..4], b"MDX0");
        assert_eq!(parse_container(&bytes).unwrap(), c);
    }

    #[test]
    fn emission_is_deterministic() {
        let c = minimal();
        assert_eq!(emit_container(&c).unwrap(), emit_container(&c.clone()).unwrap());
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = emit_container(&minimal()).unwrap();
        bytes[0] = b'X';
        assert_eq!(parse_container(&bytes), Err(ContainerError::BadMagic));
        let mut bytes = emit_container(&minimal()).unwrap();
        bytes[4] = 2;
        assert_eq!(parse_container(&bytes), Err(ContainerError::UnsupportedVersion(2)));
        assert_eq!(parse_container(b"MDX"), Err(ContainerError::BadMagic));
    }

    #[test]
    fn entry_out_of_range() {
        let c = minimal();
        let mut bytes = emit_container(&c).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&5u32.to_le_bytes());
        assert_eq!(parse_container(&bytes), Err(ContainerError::IndexOutOfRange { section: Section::Entry, index: 5 }));
    }

    #[test]
    fn duplicate_pool_entry_is_an_invariant_violation() {
        let mut c = minimal();
        c.strings.push("V".into());
        assert!(matches!(emit_container(&c), Err(ContainerError::InvariantViolation(_))));
        assert_eq!(c.validate(), Err(ContainerError::DuplicatePoolEntry { section: Section::Strings, index: 3 }));
    }

    #[test]
    fn trailing_and_truncated_input() {
        let mut bytes = emit_container(&minimal()).unwrap();
        bytes.push(0);
        assert_eq!(parse_container(&bytes), Err(ContainerError::TrailingBytes { count: 1 }));
        let bytes = emit_container(&minimal()).unwrap();
        assert!(matches!(parse_container(&bytes[..bytes.len() - 1]), Err(ContainerError::Truncated { .. })));
    }

    #[test]
    fn undecodable_body() {
        let mut c = minimal();
        c.methods[0].body = vec![CodeUnit(0x0013)];
        assert!(matches!(c.validate(), Err(ContainerError::UndecodableBody { method: 0, .. })));
    }
}
