use mdx_collect::{collect_run, Traces};
use mdx_core::{decode_body, emit_container, parse_container, Container, Instruction, MethodKind, Value};
use mdx_corpus::{generate, leak_through_rewrite, reflective_pair, CorpusSpec, Family, Generated};
use mdx_reassemble::{reassemble, FieldPurpose, Origin, ReassembleOptions, Reassembled, INSTRUMENT_CLASS};
use mdx_vm::{Config, Mode};

fn traces(g: &Generated, inputs: &[&[Value]]) -> Traces {
    let mut all = Traces::default();
    for i in inputs {
        let (run, t) = collect_run(&g.container, &g.natives, i, Mode::Plain, Config::default());
        run.outcome.unwrap();
        all.merge(t.unwrap());
    }
    all
}

fn pipeline(g: &Generated) -> Reassembled {
    reassemble(&traces(g, &[g.inputs()]), ReassembleOptions::default()).unwrap()
}

fn body(c: &Container, key: &str) -> Vec<Instruction> {
    let m = c.find_method(key).unwrap_or_else(|| panic!("{key} missing"));
    decode_body(&c.methods[m as usize].body).unwrap().into_iter().map(|(_, i)| i).collect()
}

fn calls(c: &Container, key: &str) -> Vec<String> {
    body(c, key)
        .iter()
        .filter_map(|i| match i {
            Instruction::Invoke { method, .. } => Some(c.method_key(*method as u32)),
            _ => None,
        })
        .collect()
}

#[test]
fn rewrite_example_keeps_both_calls_behind_one_guard() {
    let r = pipeline(&leak_through_rewrite());
    let c = &r.container;
    let leak_calls = calls(c, "Lcom/test/Main;->advancedLeak");
    assert!(leak_calls.contains(&"Lcom/test/Main;->normal".to_string()));
    assert!(leak_calls.contains(&"Lcom/test/Main;->sink".to_string()));
    assert_eq!(r.plan.fields.len(), 1);
    let f = &r.plan.fields[0];
    assert_eq!(f.name, "com_test_Main_advancedLeak_0");
    assert!(matches!(f.purpose, FieldPurpose::Divergence { .. }));
    let sgets = body(c, "Lcom/test/Main;->advancedLeak")
        .iter()
        .filter(|i| matches!(i, Instruction::SGet { field, .. } if c.field_ref(*field as u32).starts_with(INSTRUMENT_CLASS)))
        .count();
    assert_eq!(sgets, 1);
    assert!(c.strings.iter().any(|s| s == "mdx-instrument-seed:0"));
}

#[test]
fn output_round_trips_and_validates() {
    for family in
        [Family::Benign, Family::SelfModifying(1), Family::SelfModifying(2), Family::Reflective, Family::Mixed]
    {
        for seed in 0..20 {
            let g = generate(&CorpusSpec::new(family, seed)).unwrap();
            let r = pipeline(&g);
            r.container.validate().unwrap();
            let bytes = emit_container(&r.container).unwrap();
            assert_eq!(parse_container(&bytes).unwrap(), r.container, "{}", g.name);
        }
    }
}

#[test]
fn unexecuted_code_is_dropped() {
    let g = generate(&CorpusSpec::new(Family::Benign, 2)).unwrap();
    assert!(g.container.find_method("Lcom/test/Main;->deadLeak").is_some());
    let r = pipeline(&g);
    let c = &r.container;
    // The class was loaded, so the never-called method remains as a bodiless stub.
    let dead = c.find_method("Lcom/test/Main;->deadLeak").unwrap();
    assert_eq!(c.methods[dead as usize].kind, MethodKind::Stub);
    assert!(c.methods[dead as usize].body.is_empty());
    assert!(c.strings.iter().all(|s| s != mdx_corpus::DECOY));
}

#[test]
fn reflective_call_becomes_a_proxy_call() {
    let (g, _) = reflective_pair();
    let r = pipeline(&g);
    let c = &r.container;
    let b = body(c, "Lcom/test/Main;->reflectLeak");
    assert!(!b.iter().any(|i| matches!(i, Instruction::InvokeIdx { .. })));
    let proxy = "Lmdx/Modification;->reveal_com_test_Impl_leak";
    assert!(calls(c, "Lcom/test/Main;->reflectLeak").contains(&proxy.to_string()));
    assert_eq!(calls(c, proxy), ["Lcom/test/Impl;->leak"]);
    let leak = g.container.find_method("Lcom/test/Impl;->leak").unwrap();
    assert_eq!(r.original_of(c.find_method(proxy).unwrap()), Some(leak));
}

#[test]
fn two_targets_at_one_site_get_a_guarded_dispatch() {
    let g = (1..300)
        .map(|s| generate(&CorpusSpec::new(Family::Reflective, s)).unwrap())
        .find(|g| {
            let r = pipeline(g);
            r.plan.fields.iter().any(|f| matches!(f.purpose, FieldPurpose::Reflection { .. }))
        })
        .expect("some seed resolves two targets at one site");
    let r = pipeline(&g);
    let callers = calls(&r.container, "Lcom/test/Main;->reflectLeak");
    assert!(callers.contains(&"Lmdx/Modification;->reveal_com_test_Impl_benign".to_string()));
    assert!(callers.contains(&"Lmdx/Modification;->reveal_com_test_Impl_leak".to_string()));
    assert!(r.plan.fields.iter().any(|f| matches!(f.purpose, FieldPurpose::Reflection { .. })));
}

#[test]
fn distinct_trees_become_variants_behind_a_dispatcher() {
    let g = generate(&CorpusSpec::new(Family::Branchy(2), 3)).unwrap();
    let inputs: Vec<[Value; 1]> = (-10..=10).map(|i| [Value::Int(i)]).collect();
    let refs: Vec<&[Value]> = inputs.iter().map(|i| &i[..]).collect();
    let t = traces(&g, &refs);
    let decide = g.container.find_method("Lcom/test/Main;->decide").unwrap();
    let k = t.methods[&decide].trees.len();
    assert!(k >= 2, "inputs reach {k} paths");
    let r = reassemble(&t, ReassembleOptions { seed: 5 }).unwrap();
    let c = &r.container;
    let layout = &r.methods[&decide];
    assert!(layout.dispatcher.is_some());
    assert_eq!(layout.variants.len(), k);
    let dispatched = calls(c, "Lcom/test/Main;->decide");
    for i in 0..k {
        assert!(dispatched.contains(&format!("Lcom/test/Main;->decide_variant_{i}")));
    }
    let variant_fields = r.plan.fields.iter().filter(|f| matches!(f.purpose, FieldPurpose::Variant { .. })).count();
    assert_eq!(variant_fields, k - 1);
}

#[test]
fn every_il_entry_survives() {
    for seed in 0..10 {
        let g = generate(&CorpusSpec::new(Family::Mixed, seed)).unwrap();
        let t = traces(&g, &[g.inputs()]);
        let r = reassemble(&t, ReassembleOptions::default()).unwrap();
        for (m, trace) in &t.methods {
            for (i, tree) in trace.trees.iter().enumerate() {
                let layout = &r.methods[m].variants[i];
                for (n, node) in tree.nodes.iter().enumerate() {
                    for e in &node.il {
                        let hit = layout.origins.values().any(|o| *o == Origin::Il { node: n, pc: e.pc });
                        assert!(hit, "{} method {m} node {n} pc {}", g.name, e.pc);
                    }
                }
            }
        }
    }
}
