//! Pool rebuilding and final assembly.

use std::collections::{BTreeMap, BTreeSet};

use mdx_collect::{DanglingIndex, MetadataCapture, Traces};
use mdx_core::{Assembler, ContainerBuilder, FieldInit, Instruction, Label, MethodKind, Reg, Section, TaintRole};

use crate::plan::{
    sanitize, FieldRef, InstrumentPlan, Item, MethodRef, Origin, SymBody, SymInsn, PROXY_PREFIX, SEED_PREFIX,
};
use crate::variants::VariantSet;
use crate::{MethodLayout, ReassembleError, Reassembled, VariantLayout};

fn dangling(section: Section, index: u32) -> ReassembleError {
    ReassembleError::Dangling(DanglingIndex { section, index })
}

struct Meta<'a>(&'a MetadataCapture);

impl<'a> Meta<'a> {
    fn string(&self, s: u32) -> Result<&'a str, ReassembleError> {
        self.0.strings.get(&s).map(String::as_str).ok_or(dangling(Section::Strings, s))
    }

    fn desc(&self, t: u32) -> Result<&'a str, ReassembleError> {
        let s = self.0.types.get(&t).ok_or(dangling(Section::Types, t))?;
        self.string(*s)
    }

    fn proto(&self, b: &mut ContainerBuilder, p: u32) -> Result<u32, ReassembleError> {
        let proto = self.0.protos.get(&p).ok_or(dangling(Section::Protos, p))?;
        let ret = self.desc(proto.ret)?;
        let params = proto.params.iter().map(|t| self.desc(*t)).collect::<Result<Vec<_>, _>>()?;
        Ok(b.proto(ret, &params))
    }
}

fn narrow(section: Section, index: u32) -> Result<u16, ReassembleError> {
    u16::try_from(index).map_err(|_| ReassembleError::IndexOverflow { section, index })
}

struct Maps {
    methods: BTreeMap<u32, u32>,
    fields: BTreeMap<u32, u32>,
    variants: BTreeMap<(u32, usize), u32>,
    proxies: BTreeMap<u32, u32>,
    instrument: Vec<u32>,
}

impl Maps {
    fn method(&self, r: MethodRef) -> Result<u16, ReassembleError> {
        let idx = match r {
            MethodRef::Orig(m) => self.methods.get(&m).copied().ok_or(dangling(Section::Methods, m))?,
            MethodRef::Variant { method, index } => self.variants[&(method, index)],
            MethodRef::Proxy(t) => self.proxies[&t],
        };
        narrow(Section::Methods, idx)
    }

    fn field(&self, r: FieldRef) -> Result<u16, ReassembleError> {
        let idx = match r {
            FieldRef::Orig(f) => self.fields.get(&f).copied().ok_or(dangling(Section::Fields, f))?,
            FieldRef::Instrument(id) => self.instrument[id],
        };
        narrow(Section::Fields, idx)
    }
}

fn assemble(
    owner: u32,
    body: &SymBody,
    b: &mut ContainerBuilder,
    meta: &Meta<'_>,
    maps: &Maps,
) -> Result<VariantLayout, ReassembleError> {
    let mut a = Assembler::new();
    let labels: Vec<Label> = (0..body.labels).map(|_| a.label()).collect();
    let mut origins = Vec::new();
    for item in &body.items {
        let (sym, origin) = match item {
            Item::Label(l) => {
                a.bind(labels[*l]);
                continue;
            }
            Item::Insn(sym, origin) => (sym, *origin),
        };
        let idx = match sym {
            SymInsn::Plain(insn) => a.emit(insn.clone()),
            SymInsn::ConstString { dst, string } => {
                let s = b.string(meta.string(*string)?);
                a.emit(Instruction::ConstString { dst: *dst, string: narrow(Section::Strings, s)? })
            }
            SymInsn::SGet { dst, field } => a.emit(Instruction::SGet { dst: *dst, field: maps.field(*field)? }),
            SymInsn::SPut { src, field } => a.emit(Instruction::SPut { src: *src, field: maps.field(*field)? }),
            SymInsn::Invoke { method, args } => {
                a.emit(Instruction::Invoke { method: maps.method(*method)?, args: args.clone() })
            }
            SymInsn::InvokeIdx { obj, index, args } => {
                a.emit(Instruction::InvokeIdx { obj: *obj, index: *index, args: args.clone() })
            }
            SymInsn::If { cond, a: x, b: y, target } => a.branch(*cond, *x, *y, labels[*target]),
            SymInsn::Goto { target } => a.goto(labels[*target]),
        };
        origins.push((idx, origin));
    }
    let out = a.assemble().map_err(|source| ReassembleError::Assemble { method: owner, source })?;
    b.set_body(owner, body.registers(), out.units.clone());
    Ok(VariantLayout { method: owner, origins: origins.into_iter().map(|(i, o)| (out.item_pc(i), o)).collect() })
}

pub(crate) fn build(
    traces: &Traces,
    sets: Vec<VariantSet>,
    mut plan: InstrumentPlan,
) -> Result<Reassembled, ReassembleError> {
    let meta = Meta(&traces.meta);
    let mut b = ContainerBuilder::new();
    b.string(&format!("{SEED_PREFIX}{}", plan.seed));

    let mut classes = BTreeMap::new();
    for (oc, def) in &traces.meta.classes {
        let super_ty = def.super_ty.map(|s| meta.desc(s)).transpose()?;
        classes.insert(*oc, b.class(meta.desc(def.ty)?, super_ty));
    }
    let class_by_desc = |b: &ContainerBuilder, desc: &str| b.container().find_class(desc);

    let mut fields = BTreeMap::new();
    for (of, def) in &traces.meta.fields {
        let init = match def.init {
            FieldInit::Str(s) => FieldInit::Str(b.string(meta.string(s)?)),
            other => other,
        };
        let nf = b.field(meta.desc(def.class)?, meta.string(def.name)?, meta.desc(def.ty)?, def.is_static, init);
        fields.insert(*of, nf);
    }

    let traced: BTreeSet<u32> = sets.iter().map(|s| s.method).collect();
    let mut methods = BTreeMap::new();
    for (om, def) in &traces.meta.methods {
        let proto = meta.proto(&mut b, def.proto)?;
        let kind = match def.kind {
            MethodKind::Bytecode if traced.contains(om) => MethodKind::Bytecode,
            MethodKind::Bytecode => MethodKind::Stub,
            k => k,
        };
        let arity = traces.meta.protos[&def.proto].params.len() as u16;
        let nm = b.method(meta.desc(def.class)?, meta.string(def.name)?, proto, kind, def.role, arity, vec![]);
        methods.insert(*om, nm);
    }
    for (oc, def) in &traces.meta.classes {
        for f in def.fields.iter().filter_map(|f| fields.get(f)) {
            b.attach_field(classes[oc], *f);
        }
        for m in def.methods.iter().filter_map(|m| methods.get(m)) {
            b.attach_method(classes[oc], *m);
        }
    }

    let mut variants = BTreeMap::new();
    for set in sets.iter().filter(|s| s.dispatcher.is_some()) {
        let def = &traces.meta.methods[&set.method];
        let class = meta.desc(def.class)?;
        let name = meta.string(def.name)?;
        let proto = meta.proto(&mut b, def.proto)?;
        for i in 0..set.variants.len() {
            let vm = b.method(
                class,
                &format!("{name}_variant_{i}"),
                proto,
                MethodKind::Bytecode,
                TaintRole::Neither,
                0,
                vec![],
            );
            if let Some(c) = class_by_desc(&b, class) {
                b.attach_method(c, vm);
            }
            variants.insert((set.method, i), vm);
        }
    }

    let ic = b.class(&plan.class, Some("Ljava/lang/Object;"));
    plan.draw_initial_values();
    let mut instrument = Vec::with_capacity(plan.fields.len());
    for f in &mut plan.fields {
        let nf = b.field(&plan.class, &f.name, "Z", true, FieldInit::Int(f.initial as i32));
        b.attach_field(ic, nf);
        f.index = Some(nf);
        instrument.push(nf);
    }

    let mut proxies = BTreeMap::new();
    let mut proxy_names = BTreeSet::new();
    for t in sets.iter().flat_map(|s| s.proxies.iter().copied()).collect::<BTreeSet<_>>() {
        let def = traces.meta.methods.get(&t).ok_or(dangling(Section::Methods, t))?;
        let base = format!("{PROXY_PREFIX}{}_{}", sanitize(meta.desc(def.class)?), meta.string(def.name)?);
        let mut name = base.clone();
        let mut n = 1;
        while !proxy_names.insert(name.clone()) {
            name = format!("{base}_{n}");
            n += 1;
        }
        let proto = meta.proto(&mut b, def.proto)?;
        let pm = b.method(&plan.class, &name, proto, MethodKind::Bytecode, TaintRole::Neither, 0, vec![]);
        b.attach_method(ic, pm);
        proxies.insert(t, pm);
    }

    let entry = traces.meta.entry.unwrap_or(traces.entry);
    b.set_entry(*methods.get(&entry).ok_or(dangling(Section::Entry, entry))?);

    let maps = Maps { methods, fields, variants, proxies, instrument };
    let mut layouts = BTreeMap::new();
    for set in &sets {
        let main = maps.methods[&set.method];
        let layout = match &set.dispatcher {
            Some(d) => {
                let dispatcher = assemble(main, d, &mut b, &meta, &maps)?;
                let variants = set
                    .variants
                    .iter()
                    .enumerate()
                    .map(|(i, v)| assemble(maps.variants[&(set.method, i)], v, &mut b, &meta, &maps))
                    .collect::<Result<Vec<_>, _>>()?;
                MethodLayout { method: main, dispatcher: Some(dispatcher), variants }
            }
            None => MethodLayout {
                method: main,
                dispatcher: None,
                variants: vec![assemble(main, &set.variants[0], &mut b, &meta, &maps)?],
            },
        };
        layouts.insert(set.method, layout);
    }
    for (t, pm) in &maps.proxies {
        let def = &traces.meta.methods[t];
        let params = traces.meta.protos[&def.proto].params.len();
        let void = meta.desc(traces.meta.protos[&def.proto].ret)? == "V";
        let mut body = SymBody::new(params.max(1) as u16);
        let args = (0..params as u8).map(Reg).collect();
        body.push(SymInsn::Invoke { method: MethodRef::Orig(*t), args }, Origin::Forward);
        if void {
            body.push(SymInsn::Plain(Instruction::ReturnVoid), Origin::Forward);
        } else {
            body.push(SymInsn::Plain(Instruction::MoveResult { dst: Reg(0) }), Origin::Forward);
            body.push(SymInsn::Plain(Instruction::Return { src: Reg(0) }), Origin::Forward);
        }
        assemble(*pm, &body, &mut b, &meta, &maps)?;
    }

    let container = b.finish()?;
    Ok(Reassembled { container, plan, methods: layouts, method_map: maps.methods, proxies: maps.proxies })
}
