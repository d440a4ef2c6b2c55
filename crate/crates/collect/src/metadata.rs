//! Container metadata touched during execution, captured on first use with
//! its original pool index and payload.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use mdx_core::{ClassDef, Container, FieldDef, FieldInit, MethodDef, Proto, Section};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("dangling {section} index {index}")]
pub struct DanglingIndex {
    pub section: Section,
    pub index: u32,
}

fn get<T>(items: &[T], section: Section, index: u32) -> Result<&T, DanglingIndex> {
    items.get(index as usize).ok_or(DanglingIndex { section, index })
}

/// Method records are kept without bodies; bodies come from the trees.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MetadataCapture {
    pub strings: BTreeMap<u32, String>,
    pub types: BTreeMap<u32, u32>,
    pub protos: BTreeMap<u32, Proto>,
    pub fields: BTreeMap<u32, FieldDef>,
    pub methods: BTreeMap<u32, MethodDef>,
    pub classes: BTreeMap<u32, ClassDef>,
    pub entry: Option<u32>,
}

impl MetadataCapture {
    pub fn is_empty(&self) -> bool {
        self.strings.is_empty() && self.methods.is_empty() && self.classes.is_empty()
    }

    pub fn merge(&mut self, other: &MetadataCapture) {
        // First capture wins; pools are immutable during execution so the
        // payloads agree anyway.
        for (k, v) in &other.strings {
            self.strings.entry(*k).or_insert_with(|| v.clone());
        }
        for (k, v) in &other.types {
            self.types.entry(*k).or_insert(*v);
        }
        for (k, v) in &other.protos {
            self.protos.entry(*k).or_insert_with(|| v.clone());
        }
        for (k, v) in &other.fields {
            self.fields.entry(*k).or_insert_with(|| v.clone());
        }
        for (k, v) in &other.methods {
            self.methods.entry(*k).or_insert_with(|| v.clone());
        }
        for (k, v) in &other.classes {
            self.classes.entry(*k).or_insert_with(|| v.clone());
        }
        if self.entry.is_none() {
            self.entry = other.entry;
        }
    }

    pub fn string(&mut self, c: &Container, s: u32) -> Result<(), DanglingIndex> {
        if let Entry::Vacant(e) = self.strings.entry(s) {
            let v = get(&c.strings, Section::Strings, s)?;
            e.insert(v.clone());
        }
        Ok(())
    }

    pub fn ty(&mut self, c: &Container, t: u32) -> Result<(), DanglingIndex> {
        if !self.types.contains_key(&t) {
            let s = *get(&c.types, Section::Types, t)?;
            self.string(c, s)?;
            self.types.insert(t, s);
        }
        Ok(())
    }

    pub fn proto(&mut self, c: &Container, p: u32) -> Result<(), DanglingIndex> {
        if !self.protos.contains_key(&p) {
            let proto = get(&c.protos, Section::Protos, p)?.clone();
            self.ty(c, proto.ret)?;
            for t in &proto.params {
                self.ty(c, *t)?;
            }
            self.protos.insert(p, proto);
        }
        Ok(())
    }

    pub fn field(&mut self, c: &Container, f: u32) -> Result<(), DanglingIndex> {
        if !self.fields.contains_key(&f) {
            let def = get(&c.fields, Section::Fields, f)?.clone();
            self.ty(c, def.class)?;
            self.ty(c, def.ty)?;
            self.string(c, def.name)?;
            if let FieldInit::Str(s) = def.init {
                self.string(c, s)?;
            }
            self.fields.insert(f, def);
        }
        Ok(())
    }

    pub fn method(&mut self, c: &Container, m: u32) -> Result<(), DanglingIndex> {
        if !self.methods.contains_key(&m) {
            let mut def = get(&c.methods, Section::Methods, m)?.clone();
            def.body.clear();
            self.ty(c, def.class)?;
            self.proto(c, def.proto)?;
            self.string(c, def.name)?;
            self.methods.insert(m, def);
        }
        Ok(())
    }

    /// Class load: the record, its name, the super chain (records where the
    /// container has them) and every member field and method record.
    pub fn class(&mut self, c: &Container, cls: u32) -> Result<(), DanglingIndex> {
        if self.classes.contains_key(&cls) {
            return Ok(());
        }
        let def = get(&c.classes, Section::Classes, cls)?.clone();
        self.classes.insert(cls, def.clone());
        self.ty(c, def.ty)?;
        if let Some(s) = def.super_ty {
            self.ty(c, s)?;
            if let Some(sc) = c.class_of_type(s) {
                self.class(c, sc)?;
            }
        }
        for f in &def.fields {
            self.field(c, *f)?;
        }
        for m in &def.methods {
            self.method(c, *m)?;
        }
        Ok(())
    }

    /// Loads the class declaring type `ty`, if the container defines one.
    pub fn class_of_type(&mut self, c: &Container, ty: u32) -> Result<(), DanglingIndex> {
        match c.class_of_type(ty) {
            Some(cls) => self.class(c, cls),
            None => Ok(()),
        }
    }
}
