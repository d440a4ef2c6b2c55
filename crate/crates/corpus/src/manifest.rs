//! Ground truth shipped with every generated program.
//!
//! ```text
//! mdx-manifest v1
//! family self-modifying(1)
//! seed 0
//! flow Lcom/test/Main;->getSensitiveData Lcom/test/Main;->sink
//! dead-flow <source> <sink>
//! tamper Lcom/test/Main;->advancedLeak 0 13
//! arm Lcom/test/Main;->decide 8 taken
//! input i:3
//! ```

use std::fmt::Write as _;

use mdx_core::Value;
use mdx_vm::Arm;

pub const MANIFEST_HEADER: &str = "mdx-manifest v1";

/// One code write performed by a tamper native during the plain run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TamperStep {
    pub target: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArmSite {
    pub method: String,
    pub pc: usize,
    pub arm: Arm,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub family: String,
    pub seed: u64,
    /// Source to sink flows that the plain run actually executes.
    pub flows: Vec<(String, String)>,
    /// Flows present only in code that never runs.
    pub dead_flows: Vec<(String, String)>,
    pub tampers: Vec<TamperStep>,
    /// Every branch arm that some input or forced path realizes.
    pub arms: Vec<ArmSite>,
    pub inputs: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("manifest line {line}: {message}")]
pub struct ManifestError {
    pub line: usize,
    pub message: String,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MANIFEST_HEADER}");
        let _ = writeln!(s, "family {}", self.family);
        let _ = writeln!(s, "seed {}", self.seed);
        for (a, b) in &self.flows {
            let _ = writeln!(s, "flow {a} {b}");
        }
        for (a, b) in &self.dead_flows {
            let _ = writeln!(s, "dead-flow {a} {b}");
        }
        for t in &self.tampers {
            let _ = writeln!(s, "tamper {} {} {}", t.target, t.start, t.len);
        }
        for a in &self.arms {
            let _ = writeln!(s, "arm {} {} {}", a.method, a.pc, a.arm);
        }
        for v in &self.inputs {
            let _ = writeln!(s, "input {v}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MANIFEST_HEADER => {}
            _ => return Err(ManifestError { line: 1, message: format!("expected `{MANIFEST_HEADER}`") }),
        }
        let mut m = Manifest::default();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| ManifestError { line: i + 1, message };
            let words: Vec<&str> = line.split_whitespace().collect();
            let num = |w: &str| w.parse::<usize>().map_err(|_| err(format!("bad number `{w}`")));
            match words.as_slice() {
                ["family", f] => m.family = f.to_string(),
                ["seed", s] => m.seed = s.parse().map_err(|_| err(format!("bad seed `{s}`")))?,
                ["flow", a, b] => m.flows.push((a.to_string(), b.to_string())),
                ["dead-flow", a, b] => m.dead_flows.push((a.to_string(), b.to_string())),
                ["tamper", t, start, len] => {
                    m.tampers.push(TamperStep { target: t.to_string(), start: num(start)?, len: num(len)? })
                }
                ["arm", meth, pc, arm] => m.arms.push(ArmSite {
                    method: meth.to_string(),
                    pc: num(pc)?,
                    arm: arm.parse().map_err(|_| err(format!("bad arm `{arm}`")))?,
                }),
                ["input", v] => m.inputs.push(v.parse().map_err(err)?),
                _ => return Err(err(format!("unrecognized line `{line}`"))),
            }
        }
        Ok(m)
    }
}
