use mdx_collect::{collect_run, Traces};
use mdx_core::{Assembler, Cond, Container, ContainerBuilder, Instruction, MethodKind, Reg, TaintRole, Value};
use mdx_corpus::{generate, guarded_tamper, CorpusSpec, Family, Generated};
use mdx_force::{compute_path, find_ucb, forced_run, iterate, CoverageState, ForceOptions, RecordedGraph, Unreachable};
use mdx_vm::{Arm, BranchSite, Config, Event, ExecutionLog, Mode, NativeRegistry, PathSpec};

fn seed_run(c: &Container, natives: &NativeRegistry, inputs: &[Value]) -> (ExecutionLog, Traces) {
    let (run, traces) = collect_run(c, natives, inputs, Mode::Plain, Config::default());
    run.outcome.unwrap();
    (run.log, traces.unwrap())
}

/// `main(I)V` built by `f`, no natives.
fn single(registers: u16, f: impl FnOnce(&mut Assembler)) -> Container {
    let mut b = ContainerBuilder::new();
    let cls = b.class("LT;", None);
    let p = b.proto("V", &["I"]);
    let mut a = Assembler::new();
    f(&mut a);
    let m =
        b.method("LT;", "main", p, MethodKind::Bytecode, TaintRole::Neither, registers, a.assemble().unwrap().units);
    b.attach_method(cls, m);
    b.set_entry(m);
    b.finish().unwrap()
}

/// Two diamonds in a row on `v0 < 1` and `v0 < 2`, each arm setting `v1`.
fn two_diamonds() -> Container {
    single(3, |a| {
        for bound in [1, 2] {
            let (then, join) = (a.label(), a.label());
            a.emit(Instruction::Const { dst: Reg(2), value: bound });
            a.branch(Cond::Lt, Reg(0), Reg(2), then);
            a.emit(Instruction::Const { dst: Reg(1), value: 0 });
            a.goto(join);
            a.bind(then);
            a.emit(Instruction::Const { dst: Reg(1), value: 1 });
            a.bind(join);
        }
        a.emit(Instruction::ReturnVoid);
    })
}

#[test]
fn one_arm_per_diamond_is_uncovered() {
    let c = two_diamonds();
    let (log, traces) = seed_run(&c, &NativeRegistry::new(), &[Value::Int(5)]);
    let ucbs = find_ucb(&CoverageState::from_log(&log), &traces);
    assert_eq!(ucbs.len(), 2);
    assert!(ucbs.iter().all(|u| u.arm == Arm::Taken));
    assert!(ucbs.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn covered_method_has_no_ucb() {
    let c = single(2, |a| {
        let (top, exit) = (a.label(), a.label());
        a.emit(Instruction::Const { dst: Reg(1), value: 0 });
        a.bind(top);
        a.branch(Cond::Ge, Reg(1), Reg(0), exit);
        a.emit(Instruction::AddIntLit8 { dst: Reg(1), src: Reg(1), lit: 1 });
        a.goto(top);
        a.bind(exit);
        a.emit(Instruction::ReturnVoid);
    });
    let (log, traces) = seed_run(&c, &NativeRegistry::new(), &[Value::Int(3)]);
    assert!(find_ucb(&CoverageState::from_log(&log), &traces).is_empty());
}

#[test]
fn paths_force_every_conditional_on_the_way() {
    let c = two_diamonds();
    let (log, traces) = seed_run(&c, &NativeRegistry::new(), &[Value::Int(5)]);
    let graph = RecordedGraph::new(&traces);
    let ucbs = find_ucb(&CoverageState::from_log(&log), &traces);
    let first = compute_path(&traces, &graph, ucbs[0]).unwrap();
    assert_eq!(first.entries, vec![ucbs[0]]);
    let second = compute_path(&traces, &graph, ucbs[1]).unwrap();
    assert_eq!(second.entries.len(), 2);
    assert_eq!(second.entries[0], BranchSite { arm: Arm::FallThrough, ..ucbs[0] });
    assert_eq!(second.target, Some(ucbs[1]));
    let text = second.to_text();
    assert_eq!(PathSpec::parse(&text).unwrap(), second);
}

#[test]
fn ucb_behind_two_conditionals_needs_three_entries() {
    let g = generate(&CorpusSpec::new(Family::Branchy(3), 1)).unwrap();
    let (log, traces) = seed_run(&g.container, &g.natives, g.inputs());
    let graph = RecordedGraph::new(&traces);
    let decide = g.container.find_method("Lcom/test/Main;->decide").unwrap();
    let deepest = find_ucb(&CoverageState::from_log(&log), &traces)
        .into_iter()
        .filter(|u| u.method == decide)
        .max_by_key(|u| compute_path(&traces, &graph, *u).map(|p| p.entries.len()).unwrap_or(0))
        .unwrap();
    let path = compute_path(&traces, &graph, deepest).unwrap();
    assert_eq!(path.entries.len(), 3);
    assert_eq!(*path.entries.last().unwrap(), deepest);
}

#[test]
fn branch_inside_an_unrecorded_arm_is_unreachable() {
    let c = two_diamonds();
    let (_, traces) = seed_run(&c, &NativeRegistry::new(), &[Value::Int(5)]);
    let graph = RecordedGraph::new(&traces);
    let ghost = BranchSite { method: 0, pc: 0x40, arm: Arm::Taken };
    assert_eq!(compute_path(&traces, &graph, ghost), Err(Unreachable(ghost)));
}

fn tamper_fixture() -> Generated {
    guarded_tamper()
}

#[test]
fn forcing_the_guard_runs_the_rewritten_sink() {
    let g = tamper_fixture();
    let sink = g.container.find_method("Lcom/test/Main;->sink").unwrap();
    let calls_sink =
        |log: &ExecutionLog| log.events.iter().any(|e| matches!(e, Event::Invoke { callee, .. } if *callee == sink));
    let (log, traces) = seed_run(&g.container, &g.natives, g.inputs());
    assert!(!calls_sink(&log));
    let ucbs = find_ucb(&CoverageState::from_log(&log), &traces);
    assert_eq!(ucbs.len(), 1);
    let path = compute_path(&traces, &RecordedGraph::new(&traces), ucbs[0]).unwrap();
    let forced = forced_run(&g.container, &g.natives, g.inputs(), &path, Config::default()).unwrap();
    assert!(calls_sink(&forced.log));
    assert!(forced.log.events.iter().any(|e| matches!(e, Event::BranchOutcome { forced: true, .. })));
    assert!(forced.log.tamper_count() > 0);
}

#[test]
fn empty_path_is_a_plain_run() {
    for family in [Family::Benign, Family::SelfModifying(1), Family::Branchy(3)] {
        let g = generate(&CorpusSpec::new(family, 4)).unwrap();
        let (log, _) = seed_run(&g.container, &g.natives, g.inputs());
        let forced = forced_run(&g.container, &g.natives, g.inputs(), &PathSpec::empty(), Config::default()).unwrap();
        assert_eq!(forced.log, log);
    }
}

#[test]
fn fault_in_a_forced_arm_is_cleared() {
    let c = {
        let mut b = ContainerBuilder::new();
        let s = b.string("text") as u16;
        let cls = b.class("LT;", None);
        let p = b.proto("V", &["I"]);
        let mut a = Assembler::new();
        let skip = a.label();
        a.emit(Instruction::ConstString { dst: Reg(1), string: s });
        a.branch(Cond::Eq, Reg(0), Reg(0), skip);
        a.emit(Instruction::AddIntLit8 { dst: Reg(2), src: Reg(1), lit: 1 });
        a.emit(Instruction::Const { dst: Reg(2), value: 7 });
        a.bind(skip);
        a.emit(Instruction::ReturnVoid);
        let m = b.method("LT;", "main", p, MethodKind::Bytecode, TaintRole::Neither, 3, a.assemble().unwrap().units);
        b.attach_method(cls, m);
        b.set_entry(m);
        b.finish().unwrap()
    };
    let natives = NativeRegistry::new();
    let (log, traces) = seed_run(&c, &natives, &[Value::Int(0)]);
    let ucb = find_ucb(&CoverageState::from_log(&log), &traces)[0];
    let path = compute_path(&traces, &RecordedGraph::new(&traces), ucb).unwrap();
    let run = forced_run(&c, &natives, &[Value::Int(0)], &path, Config::default()).unwrap();
    assert!(run.log.events.iter().any(|e| matches!(e, Event::ExceptionCleared { pc: 4, .. })));
    assert!(matches!(run.log.events.last(), Some(Event::Return { .. })));
    // The instruction after the fault still ran and was collected.
    let main = run.traces.methods.values().next().unwrap();
    assert!(main.trees[0].root().iim.contains_key(&6));
}

#[test]
fn straight_line_needs_one_iteration() {
    let c = single(1, |a| {
        a.emit(Instruction::Const { dst: Reg(0), value: 1 });
        a.emit(Instruction::ReturnVoid);
    });
    let natives = NativeRegistry::new();
    let seed = seed_run(&c, &natives, &[Value::Int(0)]);
    let out = iterate(&c, &natives, &[Value::Int(0)], vec![seed], ForceOptions::default()).unwrap();
    assert_eq!(out.iterations.len(), 1);
    assert!(out.iterations[0].ucbs.is_empty());
}

#[test]
fn nested_conditionals_reach_every_arm() {
    for depth in 1..=6u8 {
        for seed in 0..4 {
            let g = generate(&CorpusSpec::new(Family::Branchy(depth), seed)).unwrap();
            let run = seed_run(&g.container, &g.natives, g.inputs());
            let out = iterate(&g.container, &g.natives, g.inputs(), vec![run], ForceOptions::default()).unwrap();
            let arms = g.manifest.arms.len();
            assert_eq!(arms, 2 * ((1usize << depth) - 1));
            assert!(out.iterations.len() <= arms, "{}: {} iterations", g.name, out.iterations.len());
            for a in &g.manifest.arms {
                let m = g.container.find_method(&a.method).unwrap();
                assert!(out.coverage.covers(&BranchSite { method: m, pc: a.pc, arm: a.arm }), "{}: {a:?}", g.name);
            }
            for w in out.iterations.windows(2) {
                assert!(w[0].new_arms > 0);
            }
        }
    }
}

#[test]
fn forced_runs_capture_the_guarded_rewrite() {
    let g = tamper_fixture();
    let (log, traces) = seed_run(&g.container, &g.natives, g.inputs());
    let m = g.container.find_method("Lcom/test/Main;->maybePatch").unwrap();
    let before = traces.methods[&m].trees.len();
    let out = iterate(&g.container, &g.natives, g.inputs(), vec![(log, traces)], ForceOptions::default()).unwrap();
    let after = &out.traces.methods[&m].trees;
    assert!(after.len() > before);
    let sink = g.container.find_method("Lcom/test/Main;->sink").unwrap() as u16;
    let has_sink = after
        .iter()
        .flat_map(|t| t.nodes.iter().flat_map(|n| &n.il))
        .any(|e| matches!(e.insn, Instruction::Invoke { method, .. } if method == sink));
    assert!(has_sink);
}

#[test]
fn cap_stops_runaway_iteration() {
    let g = generate(&CorpusSpec::new(Family::Branchy(4), 0)).unwrap();
    let run = seed_run(&g.container, &g.natives, g.inputs());
    let opts = ForceOptions { max_iterations: 1, ..ForceOptions::default() };
    assert!(iterate(&g.container, &g.natives, g.inputs(), vec![run], opts).is_err());
}
