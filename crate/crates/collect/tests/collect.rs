use mdx_collect::{collect_run, read_dump, text_dump, write_dump, CollectionTree, Collector, DumpError, Traces};
use mdx_core::{Instruction, Value};
use mdx_corpus::{generate, leak_through_rewrite, reflective_pair, CorpusSpec, Family, Generated};
use mdx_vm::{run_program, Config, Mode};

fn collect(g: &Generated) -> Traces {
    let (run, traces) = collect_run(&g.container, &g.natives, g.inputs(), Mode::Plain, Config::default());
    run.outcome.unwrap();
    traces.unwrap()
}

fn only_tree<'a>(t: &'a Traces, g: &Generated, key: &str) -> &'a CollectionTree {
    let m = g.container.find_method(key).unwrap();
    let trees = &t.methods[&m].trees;
    assert_eq!(trees.len(), 1, "{key}");
    &trees[0]
}

#[test]
fn rewrite_loop_yields_root_and_one_divergence() {
    let g = leak_through_rewrite();
    let t = collect(&g);
    let tree = only_tree(&t, &g, "Lcom/test/Main;->advancedLeak");
    assert_eq!(tree.node_count(), 2);
    let pcs: Vec<usize> = tree.root().il.iter().map(|e| e.pc).collect();
    assert_eq!(pcs, [0x0, 0x3, 0x4, 0x6, 0x8, 0xa, 0xd, 0x10, 0x12, 0x14]);
    let child = &tree.nodes[tree.root().children[0]];
    assert_eq!((child.sm_start, child.sm_end), (Some(0xa), Some(0xd)));
    assert_eq!(child.il.len(), 1);
    let sink = g.container.find_method("Lcom/test/Main;->sink").unwrap();
    assert!(matches!(&child.il[0].insn, Instruction::Invoke { method, .. } if *method as u32 == sink));
    let normal = g.container.find_method("Lcom/test/Main;->normal").unwrap();
    assert!(matches!(&tree.root().il[5].insn, Instruction::Invoke { method, .. } if *method as u32 == normal));
    tree.check().unwrap();
}

#[test]
fn nested_rewrites_yield_a_grandchild() {
    let g = generate(&CorpusSpec::new(Family::SelfModifying(2), 0)).unwrap();
    let t = collect(&g);
    let tree = only_tree(&t, &g, "Lcom/test/Main;->layeredLeak");
    assert_eq!(tree.node_count(), 3);
    assert_eq!(tree.depth(), 2);
    let child = tree.root().children[0];
    let grandchild = tree.nodes[child].children[0];
    assert_eq!(tree.nodes[grandchild].parent, Some(child));
    assert_eq!(tree.nodes[grandchild].il.len(), 1);
    tree.check().unwrap();
}

#[test]
fn collection_does_not_change_the_run() {
    for family in
        [Family::Benign, Family::SelfModifying(1), Family::SelfModifying(2), Family::Reflective, Family::Mixed]
    {
        for seed in 0..15 {
            let g = generate(&CorpusSpec::new(family, seed)).unwrap();
            let plain = run_program(&g.container, &g.natives, g.inputs(), Mode::Plain, Config::default(), None);
            let (hooked, traces) = collect_run(&g.container, &g.natives, g.inputs(), Mode::Plain, Config::default());
            assert_eq!(plain.log, hooked.log, "{}", g.name);
            assert_eq!(plain.outcome, hooked.outcome);
            assert_eq!(plain.container, hooked.container);
            for tree in traces.unwrap().all_trees() {
                tree.check().unwrap();
            }
        }
    }
}

#[test]
fn repeated_identical_invocations_collapse() {
    let g = generate(&CorpusSpec::new(Family::Reflective, 0)).unwrap();
    let mut t = collect(&g);
    let before = t.tree_count();
    t.merge(collect(&g));
    assert_eq!(t.tree_count(), before);

    // The same branchy method driven down two different paths gives two trees.
    let g = generate(&CorpusSpec::new(Family::Branchy(2), 1)).unwrap();
    let decide = g.container.find_method("Lcom/test/Main;->decide").unwrap();
    let mut all = Traces::default();
    for input in -12..=12 {
        let (_, traces) = collect_run(&g.container, &g.natives, &[Value::Int(input)], Mode::Plain, Config::default());
        all.merge(traces.unwrap());
    }
    let n = all.methods[&decide].trees.len();
    assert!((1..=4).contains(&n), "{n}");
}

#[test]
fn reflective_targets_are_recorded_once() {
    let (g, direct) = reflective_pair();
    let t = collect(&g);
    let tree = only_tree(&t, &g, "Lcom/test/Main;->reflectLeak");
    let leak = g.container.find_method("Lcom/test/Impl;->leak").unwrap();
    let recs: Vec<_> = tree.reflection.iter().map(|r| (r.target, r.depth)).collect();
    assert_eq!(recs, [(leak, 1)]);
    assert!(t.meta.methods.contains_key(&leak));
    let t = collect(&direct);
    assert!(t.all_trees().all(|tree| tree.reflection.is_empty()));
}

#[test]
fn depth_limit_drops_deep_records() {
    let g = (1..200)
        .map(|s| generate(&CorpusSpec::new(Family::Reflective, s)).unwrap())
        .find(|g| g.container.find_method("Lcom/test/Impl;->reallyLeak").is_some() && !g.manifest.flows.is_empty())
        .expect("some seed nests reflection");
    let mut shallow = Collector::new(1);
    run_program(&g.container, &g.natives, g.inputs(), Mode::Plain, Config::default(), Some(&mut shallow));
    let (trees, _) = shallow.finish().unwrap();
    assert!(trees.iter().flat_map(|t| &t.reflection).all(|r| r.depth <= 1));
    let t = collect(&g);
    assert!(t.all_trees().flat_map(|t| &t.reflection).any(|r| r.depth == 2));
}

#[test]
fn metadata_covers_what_ran() {
    let g = leak_through_rewrite();
    let t = collect(&g);
    let c = &g.container;
    for key in ["onCreate", "advancedLeak", "normal", "sink", "getSensitiveData", "bytecodeTamper"] {
        let m = c.find_method(&format!("Lcom/test/Main;->{key}")).unwrap();
        assert!(t.meta.methods.contains_key(&m), "{key}");
    }
    // The rewritten constant load is never executed, so its string is not needed.
    let decoy = c.find_string(mdx_corpus::DECOY).unwrap();
    assert!(!t.meta.strings.contains_key(&decoy));
    assert_eq!(t.meta.entry, Some(c.entry));
}

#[test]
fn dumps_round_trip() {
    for family in [Family::SelfModifying(2), Family::Mixed, Family::Benign] {
        let g = generate(&CorpusSpec::new(family, 5)).unwrap();
        let t = collect(&g);
        let bytes = write_dump(&t);
        assert_eq!(read_dump(&bytes).unwrap(), t);
        assert!(text_dump(&t).contains("node"));
        assert!(matches!(read_dump(&bytes[..bytes.len() - 1]), Err(DumpError::Truncated | DumpError::Malformed(_))));
    }
    assert_eq!(read_dump(b"XXXX\x01\0\0\0"), Err(DumpError::BadMagic));
}
