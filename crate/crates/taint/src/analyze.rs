//! Forward may-taint over registers and static fields.
//!
//! Every bytecode method is a root with clean parameters, so code nothing
//! calls is still analyzed. Conditionals contribute both arms. Calls into
//! bytecode are followed with the caller's argument taint up to
//! [`DEFAULT_CALL_DEPTH`] frames deep; `invoke-idx` has no static target and
//! contributes no edge. Static-field taint is global and the whole analysis
//! repeats until it stops growing.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use mdx_core::{decode_body, Container, Instruction, MethodKind, TaintRole};

pub const DEFAULT_CALL_DEPTH: usize = 8;

/// A source-to-sink chain. `witness` starts at the source call site and
/// ends at the sink call site; the steps between are where the taint moved
/// across a call, a return or a static field.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TaintFlow {
    pub source: u32,
    pub sink: u32,
    pub witness: Vec<(u32, usize)>,
}

impl TaintFlow {
    /// One line of the machine-readable report.
    pub fn record(&self, c: &Container) -> String {
        let steps: Vec<String> = self.witness.iter().map(|(m, pc)| format!("{}@{pc:#x}", c.method_key(*m))).collect();
        format!(
            "flow\tsource={}\tsink={}\twitness={}",
            c.method_key(self.source),
            c.method_key(self.sink),
            steps.join(",")
        )
    }
}

/// Taint of one value: where it came from and how it got here.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Fact {
    source: u32,
    steps: Vec<(u32, usize)>,
}

impl Fact {
    fn then(&self, m: u32, pc: usize) -> Fact {
        let mut steps = self.steps.clone();
        if steps.last() != Some(&(m, pc)) {
            steps.push((m, pc));
        }
        Fact { source: self.source, steps }
    }
}

type Regs = Vec<Option<Fact>>;

/// Keeps `into`'s witness where it has one; reports whether anything new
/// became tainted.
fn join(into: &mut Regs, from: &Regs) -> bool {
    let mut grew = false;
    for (a, b) in into.iter_mut().zip(from) {
        if a.is_none() && b.is_some() {
            *a = b.clone();
            grew = true;
        }
    }
    grew
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalysisOptions {
    pub call_depth: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions { call_depth: DEFAULT_CALL_DEPTH }
    }
}

struct Analysis<'a> {
    c: &'a Container,
    bodies: HashMap<u32, Vec<(usize, Instruction)>>,
    statics: BTreeMap<u32, Fact>,
    statics_grew: bool,
    flows: BTreeMap<(u32, u32), Vec<(u32, usize)>>,
    /// Per pass: (method, tainted-parameter mask, depth) to result taint.
    memo: HashMap<(u32, u64, usize), Option<Fact>>,
    active: BTreeSet<(u32, u64)>,
    depth_limit: usize,
}

impl Analysis<'_> {
    fn flow(&mut self, fact: &Fact, sink: u32, m: u32, pc: usize) {
        let witness = fact.then(m, pc).steps;
        let slot = self.flows.entry((fact.source, sink)).or_insert_with(|| witness.clone());
        if (witness.len(), &witness) < (slot.len(), &*slot) {
            *slot = witness;
        }
    }

    /// Result taint of `m` entered with `params`.
    fn method(&mut self, m: u32, params: &[Option<Fact>], depth: usize) -> Option<Fact> {
        let mask = params.iter().enumerate().fold(0u64, |acc, (i, p)| acc | ((p.is_some() as u64) << i.min(63)));
        if let Some(r) = self.memo.get(&(m, mask, depth)) {
            return r.clone();
        }
        if !self.active.insert((m, mask)) {
            return None;
        }
        let result = self.body(m, params, depth);
        self.active.remove(&(m, mask));
        self.memo.insert((m, mask, depth), result.clone());
        result
    }

    fn body(&mut self, m: u32, params: &[Option<Fact>], depth: usize) -> Option<Fact> {
        let insns = self.bodies.get(&m).cloned()?;
        if insns.is_empty() {
            return None;
        }
        let registers = self.c.methods[m as usize].registers as usize;
        // The extra slot is the pending call result.
        let pending = registers;
        let index: BTreeMap<usize, usize> = insns.iter().enumerate().map(|(i, (pc, _))| (*pc, i)).collect();
        let mut entry: Regs = vec![None; registers + 1];
        for (slot, p) in entry.iter_mut().zip(params) {
            *slot = p.clone();
        }
        let mut states: Vec<Option<Regs>> = vec![None; insns.len()];
        states[0] = Some(entry);
        let mut work: BTreeSet<usize> = BTreeSet::from([0]);
        let mut result: Option<Fact> = None;
        while let Some(i) = work.pop_first() {
            let (pc, insn) = &insns[i];
            let pc = *pc;
            let mut s = states[i].clone().expect("queued states exist");
            let mut next = Vec::with_capacity(2);
            if insn.falls_through() {
                next.push(pc + insn.width());
            }
            if let Some(off) = insn.branch_offset() {
                next.push((pc as i64 + off as i64) as usize);
            }
            match insn {
                Instruction::Const { dst, .. } | Instruction::ConstString { dst, .. } => s[dst.index()] = None,
                Instruction::Move { dst, src } | Instruction::AddIntLit8 { dst, src, .. } => {
                    s[dst.index()] = s[src.index()].clone()
                }
                Instruction::MoveResult { dst } => s[dst.index()] = s[pending].take(),
                Instruction::SGet { dst, field } => {
                    s[dst.index()] = self.statics.get(&(*field as u32)).map(|f| f.then(m, pc));
                }
                Instruction::SPut { src, field } => {
                    if let Some(f) = &s[src.index()] {
                        if let Entry::Vacant(e) = self.statics.entry(*field as u32) {
                            e.insert(f.then(m, pc));
                            self.statics_grew = true;
                        }
                    }
                }
                Instruction::Invoke { method: callee, args } => {
                    let callee = *callee as u32;
                    let taints: Vec<Option<Fact>> = args.iter().map(|r| s[r.index()].clone()).collect();
                    s[pending] = self.call(m, pc, callee, &taints, depth);
                }
                Instruction::InvokeIdx { .. } => s[pending] = None,
                Instruction::Return { src } if result.is_none() => result = s[src.index()].clone(),
                _ => {}
            }
            for t in next {
                let Some(&j) = index.get(&t) else { continue };
                match &mut states[j] {
                    Some(old) => {
                        if join(old, &s) {
                            work.insert(j);
                        }
                    }
                    slot @ None => {
                        *slot = Some(s.clone());
                        work.insert(j);
                    }
                }
            }
        }
        result
    }

    fn call(&mut self, m: u32, pc: usize, callee: u32, args: &[Option<Fact>], depth: usize) -> Option<Fact> {
        let def = &self.c.methods[callee as usize];
        if def.role == TaintRole::Sink {
            for a in args.iter().flatten() {
                self.flow(&a.clone(), callee, m, pc);
            }
        }
        if def.role == TaintRole::Source {
            return Some(Fact { source: callee, steps: vec![(m, pc)] });
        }
        if def.kind != MethodKind::Bytecode || depth >= self.depth_limit {
            return None;
        }
        let inward: Vec<Option<Fact>> = args.iter().map(|a| a.as_ref().map(|f| f.then(m, pc))).collect();
        self.method(callee, &inward, depth + 1).map(|f| f.then(m, pc))
    }
}

/// Flows of `c`, one per (source, sink) pair, with the shortest witness
/// found; ordered by source then sink.
pub fn analyze(c: &Container) -> Vec<TaintFlow> {
    analyze_with(c, AnalysisOptions::default())
}

pub fn analyze_with(c: &Container, opts: AnalysisOptions) -> Vec<TaintFlow> {
    let bodies = c
        .methods
        .iter()
        .enumerate()
        .filter(|(_, m)| m.kind == MethodKind::Bytecode)
        .filter_map(|(i, m)| Some((i as u32, decode_body(&m.body).ok()?)))
        .collect();
    let mut a = Analysis {
        c,
        bodies,
        statics: BTreeMap::new(),
        statics_grew: true,
        flows: BTreeMap::new(),
        memo: HashMap::new(),
        active: BTreeSet::new(),
        depth_limit: opts.call_depth,
    };
    let roots: Vec<u32> = {
        let mut r: Vec<u32> = a.bodies.keys().copied().collect();
        r.sort_unstable();
        r
    };
    while a.statics_grew {
        a.statics_grew = false;
        a.memo.clear();
        for m in &roots {
            let params = vec![None; c.arity(*m)];
            a.method(*m, &params, 0);
        }
    }
    a.flows.into_iter().map(|((source, sink), witness)| TaintFlow { source, sink, witness }).collect()
}

/// Human summary: one line per flow, then a count.
pub struct Summary<'a>(pub &'a Container, pub &'a [TaintFlow]);

impl fmt::Display for Summary<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for flow in self.1 {
            writeln!(
                f,
                "{} reaches {} in {} steps",
                self.0.method_key(flow.source),
                self.0.method_key(flow.sink),
                flow.witness.len()
            )?;
        }
        match self.1.len() {
            0 => write!(f, "no flows"),
            1 => write!(f, "1 flow"),
            n => write!(f, "{n} flows"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn then_does_not_repeat_a_step() {
        let f = Fact { source: 1, steps: vec![(0, 0)] };
        assert_eq!(f.then(0, 0).steps, vec![(0, 0)]);
        assert_eq!(f.then(0, 4).then(2, 0).steps, vec![(0, 0), (0, 4), (2, 0)]);
    }

    #[test]
    fn join_keeps_the_first_witness() {
        let a = Some(Fact { source: 1, steps: vec![(0, 0)] });
        let b = Some(Fact { source: 2, steps: vec![(0, 6)] });
        let mut into = vec![a.clone(), None];
        assert!(join(&mut into, &vec![b.clone(), b.clone()]));
        assert_eq!(into, vec![a, b.clone()]);
        assert!(!join(&mut into, &vec![None, b]));
    }

    #[test]
    fn empty_container_has_no_flows() {
        assert!(analyze(&Container::default()).is_empty());
    }
}
