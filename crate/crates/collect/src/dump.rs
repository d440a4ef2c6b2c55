//! Trace dump files.
//!
//! Binary, little-endian, `"MDXT"` followed by u32 version 1, then:
//!
//! ```text
//! u32 entry
//! u32 n { value }                                  inputs
//! metadata   strings  u32 n { u32 idx, u32 len, utf8 }
//!            types    u32 n { u32 idx, u32 string }
//!            protos   u32 n { u32 idx, u32 ret, u32 k, u32[k] }
//!            fields   u32 n { u32 idx, u32 class, u32 type, u32 name, u8 static, u8 tag [u32] }
//!            methods  u32 n { u32 idx, u32 class, u32 proto, u32 name, u8 kind, u8 role, u16 regs }
//!            classes  u32 n { u32 idx, u32 type, u32 super, u32 k, u32[k], u32 j, u32[j] }
//!            u32 entry (0xffffffff = none)
//! traces     u32 n { u32 method, u32 trees { tree } }
//! tree       u32 nodes { node }, u32 records { u32 method, u32 pc, u32 target, u32 depth }
//! node       u32 sm_start, u32 sm_end, u32 parent (0xffffffff = none),
//!            u32 k, u32[k] children, u32 il { u32 pc, u8 len, u16[len] }
//! value      u8 tag (0 nil, 1 int, 2 str, 3 obj) [i32 | u32 | u32 u32]
//! ```
//!
//! Decoded instructions and IIMs are rebuilt from the units on load.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use mdx_core::{
    decode_instruction, ClassDef, CodeUnit, FieldDef, FieldInit, MethodDef, MethodKind, Proto, TaintRole, Value,
};
use thiserror::Error;

use crate::collector::Traces;
use crate::metadata::MetadataCapture;
use crate::tree::{CollectionTree, IlEntry, MethodTrace, ReflectionRecord, TreeNode};

pub const DUMP_MAGIC: &[u8; 4] = b"MDXT";
pub const DUMP_VERSION: u32 = 1;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DumpError {
    #[error("not a trace dump")]
    BadMagic,
    #[error("unsupported trace dump version {0}")]
    UnsupportedVersion(u32),
    #[error("trace dump truncated")]
    Truncated,
    #[error("malformed trace dump: {0}")]
    Malformed(String),
}

struct W(Vec<u8>);

impl W {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(n as u32);
    }
    fn opt(&mut self, v: Option<usize>) {
        self.u32(v.map_or(NONE, |x| x as u32));
    }
    fn list(&mut self, v: &[u32]) {
        self.len(v.len());
        for x in v {
            self.u32(*x);
        }
    }
    fn value(&mut self, v: &Value) {
        match *v {
            Value::Nil => self.u8(0),
            Value::Int(i) => {
                self.u8(1);
                self.u32(i as u32);
            }
            Value::Str(s) => {
                self.u8(2);
                self.u32(s);
            }
            Value::Obj { class, id } => {
                self.u8(3);
                self.u32(class);
                self.u32(id);
            }
        }
    }
}

struct R<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> R<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DumpError> {
        if self.b.len() - self.pos < n {
            return Err(DumpError::Truncated);
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DumpError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, DumpError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32(&mut self) -> Result<u32, DumpError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn count(&mut self) -> Result<usize, DumpError> {
        let n = self.u32()? as usize;
        if n > self.b.len() - self.pos {
            return Err(DumpError::Truncated);
        }
        Ok(n)
    }
    fn opt(&mut self) -> Result<Option<usize>, DumpError> {
        let v = self.u32()?;
        Ok((v != NONE).then_some(v as usize))
    }
    fn list(&mut self) -> Result<Vec<u32>, DumpError> {
        let n = self.count()?;
        (0..n).map(|_| self.u32()).collect()
    }
    fn value(&mut self) -> Result<Value, DumpError> {
        Ok(match self.u8()? {
            0 => Value::Nil,
            1 => Value::Int(self.u32()? as i32),
            2 => Value::Str(self.u32()?),
            3 => Value::Obj { class: self.u32()?, id: self.u32()? },
            t => return Err(DumpError::Malformed(format!("value tag {t}"))),
        })
    }
}

fn kind_byte(k: MethodKind) -> u8 {
    match k {
        MethodKind::Bytecode => 0,
        MethodKind::Native => 1,
        MethodKind::Stub => 2,
    }
}

fn role_byte(r: TaintRole) -> u8 {
    match r {
        TaintRole::Neither => 0,
        TaintRole::Source => 1,
        TaintRole::Sink => 2,
    }
}

pub fn write_dump(t: &Traces) -> Vec<u8> {
    let mut w = W(Vec::new());
    w.0.extend_from_slice(DUMP_MAGIC);
    w.u32(DUMP_VERSION);
    w.u32(t.entry);
    w.len(t.inputs.len());
    for v in &t.inputs {
        w.value(v);
    }
    let m = &t.meta;
    w.len(m.strings.len());
    for (i, s) in &m.strings {
        w.u32(*i);
        w.len(s.len());
        w.0.extend_from_slice(s.as_bytes());
    }
    w.len(m.types.len());
    for (i, s) in &m.types {
        w.u32(*i);
        w.u32(*s);
    }
    w.len(m.protos.len());
    for (i, p) in &m.protos {
        w.u32(*i);
        w.u32(p.ret);
        w.list(&p.params);
    }
    w.len(m.fields.len());
    for (i, f) in &m.fields {
        w.u32(*i);
        w.u32(f.class);
        w.u32(f.ty);
        w.u32(f.name);
        w.u8(f.is_static as u8);
        match f.init {
            FieldInit::None => w.u8(0),
            FieldInit::Int(v) => {
                w.u8(1);
                w.u32(v as u32);
            }
            FieldInit::Str(s) => {
                w.u8(2);
                w.u32(s);
            }
        }
    }
    w.len(m.methods.len());
    for (i, d) in &m.methods {
        w.u32(*i);
        w.u32(d.class);
        w.u32(d.proto);
        w.u32(d.name);
        w.u8(kind_byte(d.kind));
        w.u8(role_byte(d.role));
        w.u16(d.registers);
    }
    w.len(m.classes.len());
    for (i, c) in &m.classes {
        w.u32(*i);
        w.u32(c.ty);
        w.u32(c.super_ty.unwrap_or(NONE));
        w.list(&c.fields);
        w.list(&c.methods);
    }
    w.u32(m.entry.unwrap_or(NONE));

    w.len(t.methods.len());
    for (method, trace) in &t.methods {
        w.u32(*method);
        w.len(trace.trees.len());
        for tree in &trace.trees {
            w.len(tree.nodes.len());
            for n in &tree.nodes {
                w.opt(n.sm_start);
                w.opt(n.sm_end);
                w.opt(n.parent);
                w.len(n.children.len());
                for c in &n.children {
                    w.u32(*c as u32);
                }
                w.len(n.il.len());
                for e in &n.il {
                    w.u32(e.pc as u32);
                    w.u8(e.units.len() as u8);
                    for u in &e.units {
                        w.u16(u.0);
                    }
                }
            }
            w.len(tree.reflection.len());
            for r in &tree.reflection {
                w.u32(r.method);
                w.u32(r.pc as u32);
                w.u32(r.target);
                w.u32(r.depth);
            }
        }
    }
    w.0
}

fn bad(s: impl Into<String>) -> DumpError {
    DumpError::Malformed(s.into())
}

pub fn read_dump(bytes: &[u8]) -> Result<Traces, DumpError> {
    if bytes.len() < 8 || &bytes[..4] != DUMP_MAGIC {
        return Err(DumpError::BadMagic);
    }
    let mut r = R { b: bytes, pos: 4 };
    let version = r.u32()?;
    if version != DUMP_VERSION {
        return Err(DumpError::UnsupportedVersion(version));
    }
    let entry = r.u32()?;
    let n = r.count()?;
    let inputs = (0..n).map(|_| r.value()).collect::<Result<_, _>>()?;

    let mut meta = MetadataCapture::default();
    for _ in 0..r.count()? {
        let i = r.u32()?;
        let len = r.count()?;
        let s = std::str::from_utf8(r.take(len)?).map_err(|_| bad("string is not utf-8"))?;
        meta.strings.insert(i, s.to_owned());
    }
    for _ in 0..r.count()? {
        let i = r.u32()?;
        meta.types.insert(i, r.u32()?);
    }
    for _ in 0..r.count()? {
        let i = r.u32()?;
        let ret = r.u32()?;
        meta.protos.insert(i, Proto { ret, params: r.list()? });
    }
    for _ in 0..r.count()? {
        let i = r.u32()?;
        let (class, ty, name) = (r.u32()?, r.u32()?, r.u32()?);
        let is_static = match r.u8()? {
            0 => false,
            1 => true,
            f => return Err(bad(format!("field flag {f}"))),
        };
        let init = match r.u8()? {
            0 => FieldInit::None,
            1 => FieldInit::Int(r.u32()? as i32),
            2 => FieldInit::Str(r.u32()?),
            t => return Err(bad(format!("field init tag {t}"))),
        };
        meta.fields.insert(i, FieldDef { class, ty, name, is_static, init });
    }
    for _ in 0..r.count()? {
        let i = r.u32()?;
        let (class, proto, name) = (r.u32()?, r.u32()?, r.u32()?);
        let kind = match r.u8()? {
            0 => MethodKind::Bytecode,
            1 => MethodKind::Native,
            2 => MethodKind::Stub,
            k => return Err(bad(format!("method kind {k}"))),
        };
        let role = match r.u8()? {
            0 => TaintRole::Neither,
            1 => TaintRole::Source,
            2 => TaintRole::Sink,
            k => return Err(bad(format!("method role {k}"))),
        };
        let registers = r.u16()?;
        meta.methods.insert(i, MethodDef { class, proto, name, kind, role, registers, body: vec![] });
    }
    for _ in 0..r.count()? {
        let i = r.u32()?;
        let ty = r.u32()?;
        let sup = r.u32()?;
        let fields = r.list()?;
        let methods = r.list()?;
        meta.classes.insert(i, ClassDef { ty, super_ty: (sup != NONE).then_some(sup), fields, methods });
    }
    meta.entry = r.opt()?.map(|e| e as u32);

    let mut methods = BTreeMap::new();
    for _ in 0..r.count()? {
        let method = r.u32()?;
        let mut trace = MethodTrace::new(method);
        for _ in 0..r.count()? {
            let mut nodes = Vec::new();
            for _ in 0..r.count()? {
                let sm_start = r.opt()?;
                let sm_end = r.opt()?;
                let parent = r.opt()?;
                let children = r.list()?.into_iter().map(|c| c as usize).collect();
                let mut node = TreeNode { sm_start, sm_end, parent, children, ..TreeNode::default() };
                for _ in 0..r.count()? {
                    let pc = r.u32()? as usize;
                    let len = r.u8()? as usize;
                    let units: Vec<CodeUnit> = (0..len).map(|_| r.u16().map(CodeUnit)).collect::<Result<_, _>>()?;
                    let insn = match decode_instruction(&units, 0) {
                        Ok((insn, l)) if l == units.len() => insn,
                        _ => return Err(bad(format!("IL units at pc {pc} do not form one instruction"))),
                    };
                    if node.iim.insert(pc, node.il.len()).is_some() {
                        return Err(bad(format!("pc {pc} recorded twice in one node")));
                    }
                    node.il.push(IlEntry { pc, units, insn });
                }
                nodes.push(node);
            }
            let mut reflection = BTreeSet::new();
            for _ in 0..r.count()? {
                reflection.insert(ReflectionRecord {
                    method: r.u32()?,
                    pc: r.u32()? as usize,
                    target: r.u32()?,
                    depth: r.u32()?,
                });
            }
            let tree = CollectionTree { method, nodes, reflection };
            if tree.nodes.is_empty() {
                return Err(bad("tree without a root"));
            }
            tree.check().map_err(bad)?;
            trace.trees.push(tree);
        }
        methods.insert(method, trace);
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Traces { entry, inputs, methods, meta })
}

/// Human-readable rendering for debugging; not parsed back.
pub fn text_dump(t: &Traces) -> String {
    let mut out = String::new();
    let name = |m: u32| -> String {
        let Some(d) = t.meta.methods.get(&m) else { return format!("method#{m}") };
        let class = t.meta.types.get(&d.class).and_then(|s| t.meta.strings.get(s));
        let n = t.meta.strings.get(&d.name);
        match (class, n) {
            (Some(c), Some(n)) => format!("{c}->{n}"),
            _ => format!("method#{m}"),
        }
    };
    let _ = writeln!(out, "entry {} ({})", t.entry, name(t.entry));
    let inputs: Vec<String> = t.inputs.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(out, "inputs [{}]", inputs.join(", "));
    let _ = writeln!(
        out,
        "metadata: {} strings, {} types, {} protos, {} fields, {} methods, {} classes",
        t.meta.strings.len(),
        t.meta.types.len(),
        t.meta.protos.len(),
        t.meta.fields.len(),
        t.meta.methods.len(),
        t.meta.classes.len()
    );
    for (m, trace) in &t.methods {
        let _ = writeln!(out, "method {m} {} ({} unique trees)", name(*m), trace.trees.len());
        for (i, tree) in trace.trees.iter().enumerate() {
            let _ = writeln!(out, "  tree {i}");
            for (id, n) in tree.nodes.iter().enumerate() {
                let bounds = match (n.sm_start, n.sm_end) {
                    (Some(s), Some(e)) => format!(" sm_start={s:04x} sm_end={e:04x}"),
                    (Some(s), None) => format!(" sm_start={s:04x}"),
                    _ => String::new(),
                };
                let parent = n.parent.map_or(String::new(), |p| format!(" parent={p}"));
                let _ = writeln!(out, "    node {id}{parent}{bounds}");
                for e in &n.il {
                    let _ = writeln!(out, "      {:04x}: {}", e.pc, e.insn);
                }
            }
            for r in &tree.reflection {
                let _ = writeln!(out, "    reflect {:04x} -> {} depth {}", r.pc, name(r.target), r.depth);
            }
        }
    }
    out
}
