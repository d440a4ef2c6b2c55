use std::collections::HashMap;

use crate::container::{
    ClassDef, Container, ContainerError, FieldDef, FieldInit, MethodDef, MethodKind, Proto, TaintRole,
};
use crate::isa::CodeUnit;

/// Incrementally builds a container, interning strings, types and protos so
/// the resulting pools are deduplicated.
#[derive(Debug, Default)]
pub struct ContainerBuilder {
    c: Container,
    strings: HashMap<String, u32>,
    types: HashMap<u32, u32>,
    protos: HashMap<Proto, u32>,
}

impl ContainerBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn string(&mut self, s: &str) -> u32 {
        if let Some(idx) = self.strings.get(s) {
            return *idx;
        }
        let idx = self.c.strings.len() as u32;
        self.c.strings.push(s.to_owned());
        self.strings.insert(s.to_owned(), idx);
        idx
    }

    pub fn ty(&mut self, descriptor: &str) -> u32 {
        let s = self.string(descriptor);
        if let Some(idx) = self.types.get(&s) {
            return *idx;
        }
        let idx = self.c.types.len() as u32;
        self.c.types.push(s);
        self.types.insert(s, idx);
        idx
    }

    pub fn proto(&mut self, ret: &str, params: &[&str]) -> u32 {
        let ret = self.ty(ret);
        let params = params.iter().map(|p| self.ty(p)).collect();
        self.proto_raw(Proto { ret, params })
    }

    pub fn proto_raw(&mut self, proto: Proto) -> u32 {
        if let Some(idx) = self.protos.get(&proto) {
            return *idx;
        }
        let idx = self.c.protos.len() as u32;
        self.c.protos.push(proto.clone());
        self.protos.insert(proto, idx);
        idx
    }

    pub fn field(&mut self, class: &str, name: &str, ty: &str, is_static: bool, init: FieldInit) -> u32 {
        let class = self.ty(class);
        let name = self.string(name);
        let ty = self.ty(ty);
        self.field_raw(FieldDef { class, ty, name, is_static, init })
    }

    pub fn field_raw(&mut self, field: FieldDef) -> u32 {
        self.c.fields.push(field);
        (self.c.fields.len() - 1) as u32
    }

    #[allow(clippy::too_many_arguments)]
    pub fn method(
        &mut self,
        class: &str,
        name: &str,
        proto: u32,
        kind: MethodKind,
        role: TaintRole,
        registers: u16,
        body: Vec<CodeUnit>,
    ) -> u32 {
        let class = self.ty(class);
        let name = self.string(name);
        self.method_raw(MethodDef { class, proto, name, kind, role, registers, body })
    }

    pub fn method_raw(&mut self, method: MethodDef) -> u32 {
        self.c.methods.push(method);
        (self.c.methods.len() - 1) as u32
    }

    pub fn set_body(&mut self, method: u32, registers: u16, body: Vec<CodeUnit>) {
        let m = &mut self.c.methods[method as usize];
        m.registers = registers;
        m.body = body;
    }

    /// Adds an empty class record.
    pub fn class(&mut self, descriptor: &str, super_ty: Option<&str>) -> u32 {
        let ty = self.ty(descriptor);
        let super_ty = super_ty.map(|s| self.ty(s));
        self.c.classes.push(ClassDef { ty, super_ty, fields: vec![], methods: vec![] });
        (self.c.classes.len() - 1) as u32
    }

    pub fn class_raw(&mut self, class: ClassDef) -> u32 {
        self.c.classes.push(class);
        (self.c.classes.len() - 1) as u32
    }

    pub fn attach_method(&mut self, class: u32, method: u32) {
        self.c.classes[class as usize].methods.push(method);
    }

    pub fn attach_field(&mut self, class: u32, field: u32) {
        self.c.classes[class as usize].fields.push(field);
    }

    pub fn set_entry(&mut self, method: u32) {
        self.c.entry = method;
    }

    pub fn container(&self) -> &Container {
        &self.c
    }

    /// Returns the container after checking every invariant.
    pub fn finish(self) -> Result<Container, ContainerError> {
        self.c.validate()?;
        Ok(self.c)
    }

    /// Returns the container without validation.
    pub fn into_inner(self) -> Container {
        self.c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning_deduplicates() {
        let mut b = ContainerBuilder::new();
        let a = b.proto("V", &["I", "Ljava/lang/String;"]);
        let c = b.proto("V", &["I", "Ljava/lang/String;"]);
        assert_eq!(a, c);
        assert_eq!(b.ty("I"), b.ty("I"));
        assert_eq!(b.container().strings.len(), 3);
    }
}
