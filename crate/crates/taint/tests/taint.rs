use mdx_core::{Assembler, Container, ContainerBuilder, FieldInit, Instruction, MethodKind, Reg, TaintRole};
use mdx_corpus::{generate, leak_through_rewrite, reflective_pair, CorpusSpec, Family, Generated};
use mdx_reassemble::ReassembleOptions;
use mdx_taint::{analyze, analyze_with, snapshot_container, AnalysisOptions, SnapshotError};
use mdx_testkit::pipeline;

const MAIN: &str = "LT;";

/// A container with `source()Ljava/lang/String;`, `sink(String)V` and
/// bytecode methods supplied by `body`, the first being the entry.
fn program(body: impl FnOnce(&mut ContainerBuilder, u32, u32) -> Vec<u32>) -> Container {
    let mut b = ContainerBuilder::new();
    let cls = b.class(MAIN, None);
    let ps = b.proto("Ljava/lang/String;", &[]);
    let pv = b.proto("V", &["Ljava/lang/String;"]);
    let src = b.method(MAIN, "source", ps, MethodKind::Native, TaintRole::Source, 0, vec![]);
    let sink = b.method(MAIN, "sink", pv, MethodKind::Native, TaintRole::Sink, 1, vec![]);
    b.attach_method(cls, src);
    b.attach_method(cls, sink);
    let methods = body(&mut b, src, sink);
    for m in &methods {
        b.attach_method(cls, *m);
    }
    b.set_entry(methods[0]);
    b.finish().unwrap()
}

fn call(m: u32, regs: &[u8]) -> Instruction {
    Instruction::Invoke { method: m as u16, args: regs.iter().map(|r| Reg(*r)).collect() }
}

fn body(insns: &[Instruction]) -> Vec<mdx_core::CodeUnit> {
    let mut a = Assembler::new();
    for i in insns {
        a.emit(i.clone());
    }
    a.assemble().unwrap().units
}

#[test]
fn direct_leak_has_a_witness_from_source_to_sink() {
    let c = program(|b, src, sink| {
        let p = b.proto("V", &[]);
        let code =
            body(&[call(src, &[]), Instruction::MoveResult { dst: Reg(0) }, call(sink, &[0]), Instruction::ReturnVoid]);
        vec![b.method(MAIN, "main", p, MethodKind::Bytecode, TaintRole::Neither, 1, code)]
    });
    let flows = analyze(&c);
    assert_eq!(flows.len(), 1);
    assert_eq!(flows[0].witness, vec![(2, 0), (2, 4)]);
    assert_eq!(flows[0].record(&c), "flow\tsource=LT;->source\tsink=LT;->sink\twitness=LT;->main@0x0,LT;->main@0x4");
}

#[test]
fn clean_argument_to_the_sink_is_no_flow() {
    let c = program(|b, src, sink| {
        let p = b.proto("V", &[]);
        let s = b.string("hello") as u16;
        let code = body(&[
            call(src, &[]),
            Instruction::MoveResult { dst: Reg(0) },
            Instruction::ConstString { dst: Reg(0), string: s },
            call(sink, &[0]),
            Instruction::ReturnVoid,
        ]);
        vec![b.method(MAIN, "main", p, MethodKind::Bytecode, TaintRole::Neither, 1, code)]
    });
    assert!(analyze(&c).is_empty());
}

#[test]
fn both_arms_of_a_branch_count() {
    let c = program(|b, src, sink| {
        let p = b.proto("V", &[]);
        let s = b.string("x") as u16;
        let mut a = Assembler::new();
        a.emit(Instruction::ConstString { dst: Reg(0), string: s });
        a.emit(Instruction::Const { dst: Reg(1), value: 0 });
        let skip = a.label();
        // Never false at run time, still both arms for the analysis.
        a.branch(mdx_core::Cond::Eq, Reg(1), Reg(1), skip);
        a.emit(call(src, &[]));
        a.emit(Instruction::MoveResult { dst: Reg(0) });
        a.bind(skip);
        a.emit(call(sink, &[0]));
        a.emit(Instruction::ReturnVoid);
        vec![b.method(MAIN, "main", p, MethodKind::Bytecode, TaintRole::Neither, 2, a.assemble().unwrap().units)]
    });
    assert_eq!(analyze(&c).len(), 1);
}

#[test]
fn taint_crosses_calls_returns_and_static_fields() {
    let c = program(|b, src, sink| {
        let pv = b.proto("V", &[]);
        let ps = b.proto("Ljava/lang/String;", &[]);
        let f = b.field(MAIN, "stash", "Ljava/lang/String;", true, FieldInit::None) as u16;
        let get = b.method(MAIN, "get", ps, MethodKind::Bytecode, TaintRole::Neither, 1, vec![]);
        b.set_body(
            get,
            1,
            body(&[call(src, &[]), Instruction::MoveResult { dst: Reg(0) }, Instruction::Return { src: Reg(0) }]),
        );
        let put = b.method(MAIN, "put", pv, MethodKind::Bytecode, TaintRole::Neither, 1, vec![]);
        b.set_body(
            put,
            1,
            body(&[
                call(get, &[]),
                Instruction::MoveResult { dst: Reg(0) },
                Instruction::SPut { src: Reg(0), field: f },
                Instruction::ReturnVoid,
            ]),
        );
        let leak = b.method(MAIN, "leak", pv, MethodKind::Bytecode, TaintRole::Neither, 1, vec![]);
        b.set_body(
            leak,
            1,
            body(&[Instruction::SGet { dst: Reg(0), field: f }, call(sink, &[0]), Instruction::ReturnVoid]),
        );
        vec![put, get, leak]
    });
    let flows = analyze(&c);
    assert_eq!(flows.len(), 1);
    let w = &flows[0].witness;
    assert_eq!(w.first().unwrap().0, c.find_method("LT;->get").unwrap());
    assert_eq!(w.last().unwrap().0, c.find_method("LT;->leak").unwrap());
}

#[test]
fn call_depth_bounds_the_search() {
    // main -> f1 -> ... -> f9 -> sink(arg)
    let c = program(|b, src, sink| {
        let pv = b.proto("V", &["Ljava/lang/String;"]);
        let p0 = b.proto("V", &[]);
        let main = b.method(MAIN, "main", p0, MethodKind::Bytecode, TaintRole::Neither, 1, vec![]);
        let mut next = sink;
        let mut chain = Vec::new();
        for i in (1..=9).rev() {
            let f = b.method(MAIN, &format!("f{i}"), pv, MethodKind::Bytecode, TaintRole::Neither, 1, vec![]);
            b.set_body(f, 1, body(&[call(next, &[0]), Instruction::ReturnVoid]));
            chain.push(f);
            next = f;
        }
        b.set_body(
            main,
            1,
            body(&[call(src, &[]), Instruction::MoveResult { dst: Reg(0) }, call(next, &[0]), Instruction::ReturnVoid]),
        );
        let mut all = vec![main];
        all.extend(chain);
        all
    });
    assert!(analyze(&c).is_empty());
    assert_eq!(analyze_with(&c, AnalysisOptions { call_depth: 9 }).len(), 1);
}

#[test]
fn adding_a_chain_keeps_existing_flows() {
    let build = |extra: bool| {
        program(|b, src, sink| {
            let p = b.proto("V", &[]);
            let leak = body(&[
                call(src, &[]),
                Instruction::MoveResult { dst: Reg(0) },
                call(sink, &[0]),
                Instruction::ReturnVoid,
            ]);
            let mut ms = vec![b.method(MAIN, "main", p, MethodKind::Bytecode, TaintRole::Neither, 1, leak.clone())];
            if extra {
                let pv = b.proto("V", &["Ljava/lang/String;"]);
                let log = b.method(MAIN, "upload", pv, MethodKind::Native, TaintRole::Sink, 1, vec![]);
                let code = body(&[
                    call(src, &[]),
                    Instruction::MoveResult { dst: Reg(0) },
                    call(log, &[0]),
                    Instruction::ReturnVoid,
                ]);
                ms.push(log);
                ms.push(b.method(MAIN, "more", p, MethodKind::Bytecode, TaintRole::Neither, 1, code));
            }
            ms
        })
    };
    let (small, big) = (build(false), build(true));
    let key = |c: &Container, f: &mdx_taint::TaintFlow| (c.method_key(f.source), c.method_key(f.sink));
    let before: Vec<_> = analyze(&small).iter().map(|f| key(&small, f)).collect();
    let after: Vec<_> = analyze(&big).iter().map(|f| key(&big, f)).collect();
    assert_eq!(before.len(), 1);
    assert_eq!(after.len(), 2);
    assert!(before.iter().all(|f| after.contains(f)));
}

fn code1() -> (Generated, mdx_vm::Run) {
    let g = leak_through_rewrite();
    let run =
        mdx_vm::run_program(&g.container, &g.natives, g.inputs(), mdx_vm::Mode::Plain, mdx_vm::Config::default(), None);
    run.outcome.clone().unwrap();
    (g, run)
}

#[test]
fn no_single_snapshot_shows_the_leak() {
    let (g, run) = code1();
    for at in 0..=run.log.len() {
        let snap = snapshot_container(&g.container, &run.log, at).unwrap();
        assert!(analyze(&snap).is_empty(), "ordinal {at}");
    }
    let (_, r) = pipeline(&g, ReassembleOptions::default());
    let flows = analyze(&r.container);
    assert_eq!(flows.len(), 1);
    assert_eq!(r.container.method_key(flows[0].source), "Lcom/test/Main;->getSensitiveData");
    assert_eq!(r.container.method_key(flows[0].sink), "Lcom/test/Main;->sink");
}

#[test]
fn snapshots_track_the_rewrites() {
    let (g, run) = code1();
    let m = g.container.find_method("Lcom/test/Main;->advancedLeak").unwrap() as usize;
    assert_eq!(snapshot_container(&g.container, &run.log, 0).unwrap(), g.container);
    let first = run.log.events.iter().position(|e| e.is_tamper()).unwrap();
    let code3 = snapshot_container(&g.container, &run.log, first + 1).unwrap();
    let sink = g.container.find_method("Lcom/test/Main;->sink").unwrap() as u16;
    let insns = mdx_core::decode_body(&code3.methods[m].body).unwrap();
    assert!(insns.iter().any(|(_, i)| matches!(i, Instruction::Invoke { method, .. } if *method == sink)));
    assert_eq!(snapshot_container(&g.container, &run.log, run.log.len()).unwrap(), run.container);
    assert_eq!(
        snapshot_container(&g.container, &run.log, run.log.len() + 1),
        Err(SnapshotError::OrdinalOutOfRange { at: run.log.len() + 1, len: run.log.len() })
    );
}

#[test]
fn dead_leak_disappears_after_reassembly() {
    for seed in 0..10 {
        let g = generate(&CorpusSpec::new(Family::Benign, seed)).unwrap();
        assert_eq!(g.manifest.dead_flows.len(), 1);
        assert_eq!(analyze(&g.container).len(), 1, "{}", g.name);
        let (_, r) = pipeline(&g, ReassembleOptions::default());
        assert!(analyze(&r.container).is_empty(), "{}", g.name);
    }
}

#[test]
fn lifted_reflection_matches_the_direct_twin() {
    let (g, direct) = reflective_pair();
    assert!(analyze(&g.container).is_empty(), "an unresolved invoke-idx has no static edge");
    let twin = analyze(&direct.container);
    let (_, r) = pipeline(&g, ReassembleOptions::default());
    let lifted = analyze(&r.container);
    let names = |c: &Container, fs: &[mdx_taint::TaintFlow]| -> Vec<(String, String)> {
        fs.iter().map(|f| (c.method_key(f.source), c.method_key(f.sink))).collect()
    };
    assert_eq!(names(&r.container, &lifted), names(&direct.container, &twin));
    assert_eq!(lifted.len(), 1);
}

#[test]
fn manifest_flow_counts_hold_on_reassembled_code() {
    for family in [Family::SelfModifying(1), Family::SelfModifying(2), Family::Reflective, Family::Mixed] {
        for seed in 0..15 {
            let g = generate(&CorpusSpec::new(family, seed)).unwrap();
            let (_, r) = pipeline(&g, ReassembleOptions::default());
            assert_eq!(analyze(&r.container).len(), g.manifest.flows.len(), "{}", g.name);
        }
    }
}
