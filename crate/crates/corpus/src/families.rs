use mdx_core::{Assembler, Cond, Instruction, MethodKind, Reg, TaintRole, Value};
use mdx_vm::{Arm, NativeBehavior, TamperCase};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::builder::{args, filler, init_pool, patched_range, units, Pb, DECOY, IMPL, MAIN, STRING};
use crate::manifest::ArmSite;

/// Randomization knobs for one component. `None` means the canonical layout.
pub(crate) struct Knobs<'a> {
    pub rng: Option<&'a mut ChaCha8Rng>,
    pub body_len: usize,
}

impl Knobs<'_> {
    fn fill(&mut self, pb: &mut Pb, a: &mut Assembler, pool: &[Reg]) {
        if let Some(rng) = self.rng.as_deref_mut() {
            let n = rng.gen_range(0..=self.body_len / 3);
            filler(pb, rng, a, pool, n, 1);
        }
    }

    fn init(&mut self, a: &mut Assembler, pool: &[Reg]) {
        if let Some(rng) = self.rng.as_deref_mut() {
            init_pool(rng, a, pool);
        }
    }

    fn canonical(&self) -> bool {
        self.rng.is_none()
    }
}

fn pool(from: u8, n: u8) -> Vec<Reg> {
    (from..from + n).map(Reg).collect()
}

/// A loop whose first iteration rewrites the call `normal(v0)` into
/// `sink(v0)` and whose second iteration restores it. The rewrite also turns
/// the source call into a constant string load, so a post-run snapshot of the
/// body shows no flow.
pub(crate) fn self_modifying_1(pb: &mut Pb, k: &mut Knobs, name: &str) -> u32 {
    let m = pb.bytecode(name, "V", &[]);
    let normal = pb.normal("normal");
    let sink = pb.sink();
    let src = pb.source();
    let tamper = pb.declare(MAIN, "bytecodeTamper", "V", &["I"], MethodKind::Native, TaintRole::Neither);
    let decoy = pb.b.string(DECOY);

    let iterations = match k.rng.as_deref_mut() {
        Some(rng) => rng.gen_range(2..=3),
        None => 2,
    };
    let filler_pool = pool(3, 5);
    let (v0, v1, v2) = (Reg(0), Reg(1), Reg(2));
    let mut a = Assembler::new();
    a.emit(Instruction::Invoke { method: src as u16, args: args(&[]) });
    a.emit(Instruction::MoveResult { dst: v0 });
    k.init(&mut a, &filler_pool);
    k.fill(pb, &mut a, &filler_pool);
    a.emit(Instruction::Const { dst: v1, value: 0 });
    a.emit(Instruction::Const { dst: v2, value: iterations });
    let top = a.label();
    let exit = a.label();
    a.bind(top);
    a.branch(Cond::Ge, v1, v2, exit);
    let call = a.emit(Instruction::Invoke { method: normal as u16, args: args(&[0]) });
    a.emit(Instruction::Invoke { method: tamper as u16, args: args(&[1]) });
    k.fill(pb, &mut a, &filler_pool);
    a.emit(Instruction::AddIntLit8 { dst: v1, src: v1, lit: 1 });
    a.goto(top);
    a.bind(exit);
    k.fill(pb, &mut a, &filler_pool);
    a.emit(Instruction::ReturnVoid);
    let regs = if k.canonical() { 3 } else { 8 };
    let out = pb.set_body(m, regs, &a);

    let call_pc = out.item_pc(call);
    let end = call_pc + 3;
    let mut head = units(&Instruction::ConstString { dst: v0, string: decoy as u16 });
    head.extend(units(&Instruction::Nop));
    head.extend(units(&Instruction::Nop));
    let sink_call = units(&Instruction::Invoke { method: sink as u16, args: args(&[0]) });
    let rewritten = patched_range(&out.units, 0, end, &[(0, head), (call_pc, sink_call)]);
    let original = out.units[..end].to_vec();
    pb.tamper_native("bytecodeTamper", m, vec![(0, vec![(0, rewritten)]), (1, vec![(0, original)])]);
    pb.record_tamper(m, 0, end);
    pb.record_tamper(m, 0, end);
    pb.record_flow();
    m
}

/// Two levels of rewriting. The outer loop turns the call at `Y` into a jump
/// to a block `Z` that only runs after the rewrite; inside `Z` an inner loop
/// rewrites and restores the call at `W`, which becomes `sink(v0)`.
pub(crate) fn self_modifying_2(pb: &mut Pb, k: &mut Knobs, name: &str) -> u32 {
    let m = pb.bytecode(name, "V", &[]);
    let normal = pb.normal("normal");
    let sink = pb.sink();
    let src = pb.source();
    let outer = pb.declare(MAIN, "tamperOuter", "V", &["I"], MethodKind::Native, TaintRole::Neither);
    let inner = pb.declare(MAIN, "tamperInner", "V", &["I"], MethodKind::Native, TaintRole::Neither);

    let filler_pool = pool(5, 5);
    let (v0, v1, v2, v3, v4) = (Reg(0), Reg(1), Reg(2), Reg(3), Reg(4));
    let mut a = Assembler::new();
    a.emit(Instruction::Invoke { method: src as u16, args: args(&[]) });
    a.emit(Instruction::MoveResult { dst: v0 });
    k.init(&mut a, &filler_pool);
    k.fill(pb, &mut a, &filler_pool);
    a.emit(Instruction::Const { dst: v1, value: 0 });
    a.emit(Instruction::Const { dst: v2, value: 2 });
    let top = a.label();
    let exit = a.label();
    let after_y = a.label();
    a.bind(top);
    a.branch(Cond::Ge, v1, v2, exit);
    let y = a.emit(Instruction::Invoke { method: normal as u16, args: args(&[0]) });
    a.bind(after_y);
    a.emit(Instruction::Invoke { method: outer as u16, args: args(&[1]) });
    k.fill(pb, &mut a, &filler_pool);
    a.emit(Instruction::AddIntLit8 { dst: v1, src: v1, lit: 1 });
    a.goto(top);
    a.bind(exit);
    k.fill(pb, &mut a, &filler_pool);
    a.emit(Instruction::ReturnVoid);

    let z = a.label();
    a.bind(z);
    a.emit(Instruction::Const { dst: v3, value: 0 });
    a.emit(Instruction::Const { dst: v4, value: 2 });
    let ztop = a.label();
    let zexit = a.label();
    a.bind(ztop);
    a.branch(Cond::Ge, v3, v4, zexit);
    let w = a.emit(Instruction::Invoke { method: normal as u16, args: args(&[0]) });
    a.emit(Instruction::Invoke { method: inner as u16, args: args(&[3]) });
    k.fill(pb, &mut a, &filler_pool);
    a.emit(Instruction::AddIntLit8 { dst: v3, src: v3, lit: 1 });
    a.goto(ztop);
    a.bind(zexit);
    a.goto(after_y);
    let regs = if k.canonical() { 5 } else { 10 };
    let out = pb.set_body(m, regs, &a);

    let (y_pc, w_pc, z_pc) = (out.item_pc(y), out.item_pc(w), out.label_pc(z));
    let jump = units(&Instruction::Goto32 { offset: z_pc as i32 - y_pc as i32 });
    let y_orig = out.units[y_pc..y_pc + 3].to_vec();
    let w_orig = out.units[w_pc..w_pc + 3].to_vec();
    let sink_call = units(&Instruction::Invoke { method: sink as u16, args: args(&[0]) });
    pb.tamper_native("tamperOuter", m, vec![(0, vec![(y_pc, jump)]), (1, vec![(y_pc, y_orig)])]);
    pb.tamper_native("tamperInner", m, vec![(0, vec![(w_pc, sink_call)]), (1, vec![(w_pc, w_orig)])]);
    pb.record_tamper(m, y_pc, 3);
    pb.record_tamper(m, w_pc, 3);
    pb.record_tamper(m, w_pc, 3);
    pb.record_tamper(m, y_pc, 3);
    pb.record_flow();
    m
}

/// Shape of the reflective component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ReflectShape {
    /// Table index used at the call site; ignored when `both` is set.
    pub index: i16,
    /// Resolve both table entries from the same site in one run.
    pub both: bool,
    /// The leaking target reaches the sink through a second reflective call.
    pub nested: bool,
    /// Emit a direct call instead of `invoke-idx`.
    pub direct: bool,
}

impl ReflectShape {
    pub fn leaks(&self) -> bool {
        self.both || self.index == 1
    }
}

/// Method table of `Impl`: `benign`, `leak`, and with nesting `reallyLeak`.
pub(crate) fn reflective(pb: &mut Pb, k: &mut Knobs, name: &str, shape: ReflectShape) -> u32 {
    let m = pb.bytecode(name, "V", &[]);
    let src = pb.source();
    let make = pb.make();
    let benign = pb.declare(IMPL, "benign", "V", &[STRING], MethodKind::Bytecode, TaintRole::Neither);
    let leak = pb.declare(IMPL, "leak", "V", &[STRING], MethodKind::Bytecode, TaintRole::Neither);
    let sink = pb.sink();

    let mut a = Assembler::new();
    a.emit(Instruction::ReturnVoid);
    pb.set_body(benign, 1, &a);

    let sink_call = Instruction::Invoke { method: sink as u16, args: args(&[0]) };
    let mut a = Assembler::new();
    if shape.nested {
        let really = pb.declare(IMPL, "reallyLeak", "V", &[STRING], MethodKind::Bytecode, TaintRole::Neither);
        let mut r = Assembler::new();
        r.emit(sink_call.clone());
        r.emit(Instruction::ReturnVoid);
        pb.set_body(really, 1, &r);
        a.emit(Instruction::Invoke { method: make as u16, args: args(&[]) });
        a.emit(Instruction::MoveResult { dst: Reg(1) });
        a.emit(Instruction::Const { dst: Reg(2), value: 2 });
        a.emit(Instruction::InvokeIdx { obj: Reg(1), index: Reg(2), args: args(&[0]) });
    } else {
        a.emit(sink_call);
    }
    a.emit(Instruction::ReturnVoid);
    pb.set_body(leak, 3, &a);

    let filler_pool = pool(4, 4);
    let (v0, v1, v2, v3) = (Reg(0), Reg(1), Reg(2), Reg(3));
    let mut a = Assembler::new();
    a.emit(Instruction::Invoke { method: src as u16, args: args(&[]) });
    a.emit(Instruction::MoveResult { dst: v0 });
    a.emit(Instruction::Invoke { method: make as u16, args: args(&[]) });
    a.emit(Instruction::MoveResult { dst: v1 });
    k.init(&mut a, &filler_pool);
    k.fill(pb, &mut a, &filler_pool);
    let call = |a: &mut Assembler| {
        if shape.direct {
            let target = if shape.index == 1 { leak } else { benign };
            a.emit(Instruction::Invoke { method: target as u16, args: args(&[0]) });
        } else {
            a.emit(Instruction::InvokeIdx { obj: v1, index: v2, args: args(&[0]) });
        }
    };
    if shape.both {
        a.emit(Instruction::Const { dst: v2, value: 0 });
        a.emit(Instruction::Const { dst: v3, value: 2 });
        let top = a.label();
        let exit = a.label();
        a.bind(top);
        a.branch(Cond::Ge, v2, v3, exit);
        call(&mut a);
        a.emit(Instruction::AddIntLit8 { dst: v2, src: v2, lit: 1 });
        a.goto(top);
        a.bind(exit);
    } else {
        a.emit(Instruction::Const { dst: v2, value: shape.index });
        call(&mut a);
    }
    k.fill(pb, &mut a, &filler_pool);
    a.emit(Instruction::ReturnVoid);
    let regs = if k.canonical() { 4 } else { 8 };
    pb.set_body(m, regs, &a);
    if shape.leaks() {
        pb.record_flow();
    }
    m
}

/// A complete binary decision tree of depth `depth` over the integer
/// parameter. Every leaf logs a value and returns.
pub(crate) fn branchy(pb: &mut Pb, rng: &mut ChaCha8Rng, depth: u8, name: &str) -> u32 {
    let m = pb.bytecode(name, "V", &["I"]);
    let log = pb.log();
    let mut a = Assembler::new();
    let mut ifs = Vec::new();
    emit_decision(&mut a, rng, depth, log, &mut ifs);
    let out = pb.set_body(m, 2, &a);
    let key = pb.b.container().method_key(m);
    for item in ifs {
        let pc = out.item_pc(item);
        for arm in [Arm::FallThrough, Arm::Taken] {
            pb.manifest.arms.push(ArmSite { method: key.clone(), pc, arm });
        }
    }
    m
}

fn emit_decision(a: &mut Assembler, rng: &mut ChaCha8Rng, depth: u8, log: u32, ifs: &mut Vec<usize>) {
    let (v0, v1) = (Reg(0), Reg(1));
    if depth == 0 {
        a.emit(Instruction::AddIntLit8 { dst: v1, src: v0, lit: rng.gen_range(-9..10) });
        a.emit(Instruction::Invoke { method: log as u16, args: args(&[1]) });
        a.emit(Instruction::ReturnVoid);
        return;
    }
    a.emit(Instruction::Const { dst: v1, value: rng.gen_range(-8..=8) });
    let taken = a.label();
    ifs.push(a.branch(Cond::ALL[rng.gen_range(0..6)], v0, v1, taken));
    emit_decision(a, rng, depth - 1, log, ifs);
    a.bind(taken);
    emit_decision(a, rng, depth - 1, log, ifs);
}

/// Integer-only code spread over a main method and `helpers` helper
/// methods, each helper called at most once from main or an earlier helper.
pub(crate) fn benign(pb: &mut Pb, rng: &mut ChaCha8Rng, helpers: usize, body_len: usize) -> Vec<u32> {
    let ids: Vec<u32> = (0..helpers).map(|i| pb.bytecode(&format!("helper{i}"), "I", &["I"])).collect();
    let mut called_by: Vec<Vec<usize>> = vec![Vec::new(); helpers + 1];
    for h in 0..helpers {
        // Caller slot 0 is main; slot c + 1 is helper c.
        let caller = rng.gen_range(0..=h);
        called_by[caller].push(h);
    }
    for (h, &m) in ids.iter().enumerate() {
        let p = pool(1, 5);
        let mut a = Assembler::new();
        init_pool(rng, &mut a, &p);
        a.emit(Instruction::Move { dst: p[0], src: Reg(0) });
        filler(pb, rng, &mut a, &p, body_len / 2, 2);
        for &callee in &called_by[h + 1] {
            let r = p[rng.gen_range(0..p.len())];
            a.emit(Instruction::Invoke { method: ids[callee] as u16, args: args(&[r.0]) });
            a.emit(Instruction::MoveResult { dst: r });
        }
        filler(pb, rng, &mut a, &p, body_len / 2, 2);
        a.emit(Instruction::Return { src: p[rng.gen_range(0..p.len())] });
        pb.set_body(m, 6, &a);
    }
    called_by[0].iter().map(|&h| ids[h]).collect()
}

/// Body of the benign entry: two integer parameters, a counted loop and
/// calls to the given helpers.
pub(crate) fn benign_main(pb: &mut Pb, rng: &mut ChaCha8Rng, m: u32, helpers: &[u32], body_len: usize) {
    let p = pool(2, 5);
    let (counter, limit) = (Reg(7), Reg(8));
    let mut a = Assembler::new();
    init_pool(rng, &mut a, &p);
    a.emit(Instruction::Move { dst: p[0], src: Reg(0) });
    a.emit(Instruction::Move { dst: p[1], src: Reg(1) });
    filler(pb, rng, &mut a, &p, body_len / 3, 2);
    for h in helpers {
        let r = p[rng.gen_range(0..p.len())];
        a.emit(Instruction::Invoke { method: *h as u16, args: args(&[r.0]) });
        a.emit(Instruction::MoveResult { dst: r });
    }
    a.emit(Instruction::Const { dst: counter, value: 0 });
    a.emit(Instruction::Const { dst: limit, value: rng.gen_range(1..=3) });
    let top = a.label();
    let exit = a.label();
    a.bind(top);
    a.branch(Cond::Ge, counter, limit, exit);
    filler(pb, rng, &mut a, &p, body_len / 3, 1);
    a.emit(Instruction::AddIntLit8 { dst: counter, src: counter, lit: 1 });
    a.goto(top);
    a.bind(exit);
    filler(pb, rng, &mut a, &p, body_len / 3, 2);
    a.emit(Instruction::ReturnVoid);
    pb.set_body(m, 9, &a);
}

/// A method that would leak the secret but is never called.
pub(crate) fn dead_leak(pb: &mut Pb) -> u32 {
    let m = pb.bytecode("deadLeak", "V", &[]);
    let src = pb.source();
    let sink = pb.sink();
    let mut a = Assembler::new();
    a.emit(Instruction::Invoke { method: src as u16, args: args(&[]) });
    a.emit(Instruction::MoveResult { dst: Reg(0) });
    a.emit(Instruction::Invoke { method: sink as u16, args: args(&[0]) });
    a.emit(Instruction::ReturnVoid);
    pb.set_body(m, 1, &a);
    pb.record_dead_flow();
    m
}

/// A branch on the input guards a tamper that turns a harmless call into a
/// sink call. The plain run with input 0 skips it; forcing the fall-through
/// arm executes the rewritten call.
pub(crate) fn guarded_tamper(pb: &mut Pb, name: &str) -> u32 {
    let m = pb.bytecode(name, "V", &["I"]);
    let src = pb.source();
    let normal = pb.normal("normal");
    let sink = pb.sink();
    let patch = pb.declare(MAIN, "patch", "V", &["I"], MethodKind::Native, TaintRole::Neither);
    let mut a = Assembler::new();
    a.emit(Instruction::Invoke { method: src as u16, args: args(&[]) });
    a.emit(Instruction::MoveResult { dst: Reg(2) });
    a.emit(Instruction::Const { dst: Reg(1), value: 12345 });
    let skip = a.label();
    let guard = a.branch(Cond::Ne, Reg(0), Reg(1), skip);
    a.emit(Instruction::Invoke { method: patch as u16, args: args(&[0]) });
    let call = a.emit(Instruction::Invoke { method: normal as u16, args: args(&[2]) });
    a.bind(skip);
    a.emit(Instruction::ReturnVoid);
    let out = pb.set_body(m, 3, &a);
    let pc = out.item_pc(call);
    let sink_call = units(&Instruction::Invoke { method: sink as u16, args: args(&[2]) });
    pb.natives.insert(
        Pb::key(MAIN, "patch"),
        NativeBehavior::Tamper(vec![TamperCase { when: None, target: m, writes: vec![(pc, sink_call)] }]),
    );
    let key = pb.b.container().method_key(m);
    let guard_pc = out.item_pc(guard);
    for arm in [Arm::FallThrough, Arm::Taken] {
        pb.manifest.arms.push(ArmSite { method: key.clone(), pc: guard_pc, arm });
    }
    pb.set_inputs(vec![Value::Int(0)]);
    m
}
