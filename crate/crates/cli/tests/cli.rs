use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mdx_core::parse_container;
use mdx_vm::ExecutionLog;

fn mdx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdx")).args(args).output().expect("mdx binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, family: &str, seed: u64) -> PathBuf {
    let o = mdx(&["corpus", "gen", "--family", family, "--seed", &seed.to_string(), "-o", s(dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    PathBuf::from(stdout(&o).trim())
}

#[test]
fn rewrite_pipeline_finds_the_flow_snapshots_do_not() {
    let dir = tempfile::tempdir().unwrap();
    let prog = gen(dir.path(), "self-modifying(1)", 0);
    let traces = dir.path().join("tr");
    let o = mdx(&["run", s(&prog), "--collect", s(&traces)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(traces.join("traces.mdxt").exists());

    let out = dir.path().join("out.mdx");
    let o = mdx(&["reassemble", "--traces", s(&traces), "-o", s(&out), "--emit-text"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.with_extension("plan").exists() && out.with_extension("txt").exists());

    let o = mdx(&["analyze", s(&out)]);
    assert_eq!(code(&o), 10);
    let records: Vec<_> = stdout(&o).lines().map(str::to_owned).collect();
    assert_eq!(records.len(), 1);
    assert!(records[0].contains("source=Lcom/test/Main;->getSensitiveData"));
    assert!(records[0].contains("sink=Lcom/test/Main;->sink"));
    assert!(stderr(&o).contains("1 flow"));

    let log_path = traces.join("run.log");
    let log = ExecutionLog::parse(&std::fs::read_to_string(&log_path).unwrap()).unwrap();
    for at in 0..=log.len() {
        let snap = dir.path().join(format!("snap-{at}.mdx"));
        let o = mdx(&["snapshot", s(&prog), "--log", s(&log_path), "--at", &at.to_string(), "-o", s(&snap)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let o = mdx(&["analyze", s(&snap)]);
        assert_eq!(code(&o), 0, "ordinal {at}: {}", stdout(&o));
    }
    let o = mdx(&["snapshot", s(&prog), "--log", s(&log_path), "--at", &(log.len() + 1).to_string(), "-o", "x"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn reassembly_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let prog = gen(dir.path(), "mixed", 4);
    let traces = dir.path().join("tr");
    assert_eq!(code(&mdx(&["run", s(&prog), "--collect", s(&traces)])), 0);
    let a = dir.path().join("a.mdx");
    let b = dir.path().join("b.mdx");
    for out in [&a, &b] {
        assert_eq!(code(&mdx(&["reassemble", "--traces", s(&traces), "-o", s(out), "--seed", "7"])), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let o = mdx(&["analyze", s(&a)]);
    assert_eq!(stdout(&o), stdout(&mdx(&["analyze", s(&b)])));
}

#[test]
fn corrupt_inputs_exit_with_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.mdx");
    std::fs::write(&bad, b"not a container").unwrap();
    let o = mdx(&["run", s(&bad)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("bad magic"), "{}", stderr(&o));

    let prog = gen(dir.path(), "benign", 1);
    let mut bytes = std::fs::read(&prog).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&prog, bytes).unwrap();
    assert_eq!(code(&mdx(&["analyze", s(&prog)])), 3);

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(code(&mdx(&["reassemble", "--traces", s(&empty), "-o", "x.mdx"])), 3);
    std::fs::write(empty.join("t.mdxt"), b"MDXT junk").unwrap();
    assert_eq!(code(&mdx(&["reassemble", "--traces", s(&empty), "-o", "x.mdx"])), 3);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&mdx(&[])), 2);
    assert_eq!(code(&mdx(&["run"])), 2);
    assert_eq!(code(&mdx(&["metrics", "--tp", "x", "--fp", "1", "--tn", "1", "--fn", "1"])), 2);
    assert_eq!(code(&mdx(&["--help"])), 0);
}

#[test]
fn runtime_faults_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let prog = gen(dir.path(), "branchy(3)", 0);
    let o = mdx(&["run", s(&prog), "--step-budget", "3"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("step"), "{}", stderr(&o));
}

#[test]
fn metrics_prints_the_f_measure() {
    let o = mdx(&["metrics", "--tp", "81", "--fp", "10", "--tn", "13", "--fn", "30"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).lines().any(|l| l == "F=0.637"), "{}", stdout(&o));
    let o = mdx(&["metrics", "--tp", "0", "--fp", "0", "--tn", "0", "--fn", "0"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn config_supplies_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "# shared by several subcommands\ntp = 81\nfp = 10\ntn = 13\nfn = 30\nmax-iter = 5\n")
        .unwrap();
    let o = mdx(&["--config", s(&cfg), "metrics"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("F=0.637"));
    let o = mdx(&["metrics", "--config", s(&cfg), "--tp", "95", "--fp", "4", "--tn", "19", "--fn", "16"]);
    assert!(stdout(&o).contains("F=0.841"), "{}", stdout(&o));

    std::fs::write(&cfg, "tp 81\n").unwrap();
    assert_eq!(code(&mdx(&["--config", s(&cfg), "metrics"])), 3);
}

#[test]
fn force_covers_every_arm_and_writes_paths() {
    let dir = tempfile::tempdir().unwrap();
    let prog = gen(dir.path(), "branchy(3)", 2);
    let traces = dir.path().join("tr");
    assert_eq!(code(&mdx(&["run", s(&prog), "--collect", s(&traces)])), 0);
    let paths = dir.path().join("paths");
    let o = mdx(&["force", s(&prog), "--traces", s(&traces), "--paths-dir", s(&paths)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = stdout(&o);
    let line = report.lines().find(|l| l.starts_with("arms covered")).unwrap();
    let nums: Vec<usize> = line.split_whitespace().filter_map(|w| w.parse().ok()).collect();
    assert_eq!(nums[0], nums[1], "{report}");
    let written = std::fs::read_dir(&paths).unwrap().count();
    assert!(written > 0);
    for e in std::fs::read_dir(&paths).unwrap() {
        let text = std::fs::read_to_string(e.unwrap().path()).unwrap();
        mdx_vm::PathSpec::parse(&text).unwrap();
    }
    assert!(traces.join("forced.mdxt").exists());

    let o = mdx(&["force", s(&prog), "--traces", s(&traces), "--paths-dir", s(&paths), "--max-iter", "1"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn disasm_lists_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let prog = gen(dir.path(), "reflective", 0);
    let o = mdx(&["disasm", s(&prog)]);
    assert_eq!(code(&o), 0);
    let c = parse_container(&std::fs::read(&prog).unwrap()).unwrap();
    for m in 0..c.methods.len() as u32 {
        assert!(stdout(&o).contains(c.method_name(m)));
    }
}
