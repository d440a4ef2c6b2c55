//! Shared scaffolding for the generators: one container under construction,
//! its natives, and the manifest facts recorded along the way.

use std::collections::HashMap;

use mdx_core::{
    Assembled, Assembler, CodeUnit, Cond, ContainerBuilder, FieldInit, Instruction, MethodKind, Reg, TaintRole, Value,
};
use mdx_vm::{NativeBehavior, NativeRegistry, TamperCase};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::manifest::{Manifest, TamperStep};

pub const MAIN: &str = "Lcom/test/Main;";
pub const IMPL: &str = "Lcom/test/Impl;";
pub const STRING: &str = "Ljava/lang/String;";
pub const OBJECT: &str = "Ljava/lang/Object;";
pub const SECRET: &str = "800-123-456";
pub const DECOY: &str = "non-sensitive data";

pub(crate) fn args(regs: &[u8]) -> mdx_core::ArgList {
    regs.iter().map(|r| Reg(*r)).collect()
}

pub(crate) fn units(insn: &Instruction) -> Vec<CodeUnit> {
    mdx_core::encode_instruction(insn).expect("generator emits encodable instructions")
}

pub(crate) struct Pb {
    pub b: ContainerBuilder,
    pub natives: NativeRegistry,
    pub manifest: Manifest,
    classes: HashMap<String, u32>,
    methods: HashMap<String, u32>,
    counter: Option<u32>,
}

impl Pb {
    pub fn new(family: String, seed: u64) -> Self {
        Pb {
            b: ContainerBuilder::new(),
            natives: NativeRegistry::new(),
            manifest: Manifest { family, seed, ..Manifest::default() },
            classes: HashMap::new(),
            methods: HashMap::new(),
            counter: None,
        }
    }

    pub fn class(&mut self, desc: &str) -> u32 {
        if let Some(c) = self.classes.get(desc) {
            return *c;
        }
        let c = self.b.class(desc, Some(OBJECT));
        self.classes.insert(desc.to_owned(), c);
        c
    }

    pub fn key(class: &str, name: &str) -> String {
        format!("{class}->{name}")
    }

    /// Declares a method and appends it to its class's method table.
    pub fn declare(
        &mut self,
        class: &str,
        name: &str,
        ret: &str,
        params: &[&str],
        kind: MethodKind,
        role: TaintRole,
    ) -> u32 {
        let key = Self::key(class, name);
        if let Some(m) = self.methods.get(&key) {
            return *m;
        }
        let cls = self.class(class);
        let proto = self.b.proto(ret, params);
        let m = self.b.method(class, name, proto, kind, role, params.len() as u16, vec![]);
        self.b.attach_method(cls, m);
        self.methods.insert(key, m);
        m
    }

    pub fn bytecode(&mut self, name: &str, ret: &str, params: &[&str]) -> u32 {
        self.declare(MAIN, name, ret, params, MethodKind::Bytecode, TaintRole::Neither)
    }

    pub fn set_body(&mut self, m: u32, regs: u16, asm: &Assembler) -> Assembled {
        let out = asm.assemble().expect("generated code assembles");
        self.b.set_body(m, regs, out.units.clone());
        out
    }

    pub fn source(&mut self) -> u32 {
        let key = Self::key(MAIN, "getSensitiveData");
        if !self.methods.contains_key(&key) {
            let s = self.b.string(SECRET);
            self.natives.insert(key.clone(), NativeBehavior::Str(s));
        }
        self.declare(MAIN, "getSensitiveData", STRING, &[], MethodKind::Native, TaintRole::Source)
    }

    pub fn sink(&mut self) -> u32 {
        self.natives.insert(Self::key(MAIN, "sink"), NativeBehavior::Pure);
        self.declare(MAIN, "sink", "V", &[STRING], MethodKind::Native, TaintRole::Sink)
    }

    pub fn log(&mut self) -> u32 {
        self.natives.insert(Self::key(MAIN, "log"), NativeBehavior::Pure);
        self.declare(MAIN, "log", "V", &["I"], MethodKind::Native, TaintRole::Neither)
    }

    pub fn compute(&mut self) -> u32 {
        self.natives.insert(Self::key(MAIN, "compute"), NativeBehavior::Random(100));
        self.declare(MAIN, "compute", "I", &["I"], MethodKind::Native, TaintRole::Neither)
    }

    /// `make()` returns a fresh `Impl` object, the receiver of reflective calls.
    pub fn make(&mut self) -> u32 {
        let cls = self.class(IMPL);
        self.natives.insert(Self::key(MAIN, "make"), NativeBehavior::Object(cls));
        self.declare(MAIN, "make", OBJECT, &[], MethodKind::Native, TaintRole::Neither)
    }

    /// A bytecode method with a `(String)V` signature that ignores its argument.
    pub fn normal(&mut self, name: &str) -> u32 {
        let key = Self::key(MAIN, name);
        if let Some(m) = self.methods.get(&key) {
            return *m;
        }
        let m = self.bytecode(name, "V", &[STRING]);
        let mut a = Assembler::new();
        a.emit(Instruction::ReturnVoid);
        self.set_body(m, 1, &a);
        m
    }

    pub fn counter_field(&mut self) -> u32 {
        if let Some(f) = self.counter {
            return f;
        }
        let cls = self.class(MAIN);
        let f = self.b.field(MAIN, "COUNTER", "I", true, FieldInit::Int(0));
        self.b.attach_field(cls, f);
        self.counter = Some(f);
        f
    }

    /// Registers a tamper native whose cases are keyed by its first argument.
    pub fn tamper_native(&mut self, name: &str, target: u32, cases: Vec<(i32, Vec<(usize, Vec<CodeUnit>)>)>) -> u32 {
        let m = self.declare(MAIN, name, "V", &["I"], MethodKind::Native, TaintRole::Neither);
        let cases = cases.into_iter().map(|(when, writes)| TamperCase { when: Some(when), target, writes }).collect();
        self.natives.insert(Self::key(MAIN, name), NativeBehavior::Tamper(cases));
        m
    }

    pub fn record_tamper(&mut self, target: u32, start: usize, len: usize) {
        let target = self.b.container().method_key(target);
        self.manifest.tampers.push(TamperStep { target, start, len });
    }

    pub fn record_flow(&mut self) {
        self.manifest.flows.push((Self::key(MAIN, "getSensitiveData"), Self::key(MAIN, "sink")));
    }

    pub fn record_dead_flow(&mut self) {
        self.manifest.dead_flows.push((Self::key(MAIN, "getSensitiveData"), Self::key(MAIN, "sink")));
    }

    pub fn set_inputs(&mut self, inputs: Vec<Value>) {
        self.manifest.inputs = inputs;
    }
}

/// Straight-line and diamond-shaped code over integer registers `pool`
/// (all must hold integers on entry). Never loops.
pub(crate) fn filler(pb: &mut Pb, rng: &mut ChaCha8Rng, a: &mut Assembler, pool: &[Reg], n: usize, nest: u32) {
    let pick = |rng: &mut ChaCha8Rng| pool[rng.gen_range(0..pool.len())];
    let mut left = n;
    while left > 0 {
        left -= 1;
        match rng.gen_range(0..10) {
            0 | 1 => {
                let dst = pick(rng);
                a.emit(Instruction::Const { dst, value: rng.gen_range(-50..50) });
            }
            2 | 3 => {
                let (dst, src) = (pick(rng), pick(rng));
                a.emit(Instruction::AddIntLit8 { dst, src, lit: rng.gen_range(-9..10) });
            }
            4 => {
                let (dst, src) = (pick(rng), pick(rng));
                a.emit(Instruction::Move { dst, src });
            }
            5 => {
                let log = pb.log();
                let r = pick(rng);
                a.emit(Instruction::Invoke { method: log as u16, args: args(&[r.0]) });
            }
            6 => {
                let compute = pb.compute();
                let (r, d) = (pick(rng), pick(rng));
                a.emit(Instruction::Invoke { method: compute as u16, args: args(&[r.0]) });
                a.emit(Instruction::MoveResult { dst: d });
            }
            7 => {
                let f = pb.counter_field() as u16;
                let r = pick(rng);
                if rng.gen_bool(0.5) {
                    a.emit(Instruction::SPut { src: r, field: f });
                } else {
                    a.emit(Instruction::SGet { dst: r, field: f });
                }
            }
            _ if nest > 0 && left >= 2 => {
                let cond = Cond::ALL[rng.gen_range(0..6)];
                let (x, y) = (pick(rng), pick(rng));
                let taken = a.label();
                let end = a.label();
                let inner = left.min(4);
                left -= inner;
                let split = rng.gen_range(0..=inner);
                a.branch(cond, x, y, taken);
                filler(pb, rng, a, pool, split, nest - 1);
                a.goto(end);
                a.bind(taken);
                filler(pb, rng, a, pool, inner - split, nest - 1);
                a.bind(end);
            }
            _ => {
                a.emit(Instruction::Nop);
            }
        }
    }
}

/// Loads small integer constants into every register of `pool`.
pub(crate) fn init_pool(rng: &mut ChaCha8Rng, a: &mut Assembler, pool: &[Reg]) {
    for r in pool {
        a.emit(Instruction::Const { dst: *r, value: rng.gen_range(-20..20) });
    }
}

/// Copy of `original[start..end]` with the given pcs overwritten.
pub(crate) fn patched_range(
    original: &[CodeUnit],
    start: usize,
    end: usize,
    patches: &[(usize, Vec<CodeUnit>)],
) -> Vec<CodeUnit> {
    let mut out = original[start..end].to_vec();
    for (pc, u) in patches {
        out[pc - start..pc - start + u.len()].copy_from_slice(u);
    }
    out
}
