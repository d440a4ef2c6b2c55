use std::collections::{BTreeMap, BTreeSet};

use mdx_collect::Traces;
use mdx_vm::{Arm, BranchSite, Event, ExecutionLog};

/// Branch arms observed taken, per method.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoverageState {
    pub arms: BTreeMap<u32, BTreeSet<(usize, Arm)>>,
}

impl CoverageState {
    pub fn from_log(log: &ExecutionLog) -> Self {
        let mut c = CoverageState::default();
        c.record(log);
        c
    }

    /// Adds the log's branch outcomes; returns how many arms are new.
    pub fn record(&mut self, log: &ExecutionLog) -> usize {
        let mut new = 0;
        for e in &log.events {
            if let Event::BranchOutcome { method, pc, taken, .. } = e {
                new += self.arms.entry(*method).or_default().insert((*pc, Arm::from_taken(*taken))) as usize;
            }
        }
        new
    }

    pub fn merge(&mut self, other: &CoverageState) -> usize {
        let mut new = 0;
        for (m, arms) in &other.arms {
            let mine = self.arms.entry(*m).or_default();
            for a in arms {
                new += mine.insert(*a) as usize;
            }
        }
        new
    }

    pub fn covers(&self, site: &BranchSite) -> bool {
        self.arms.get(&site.method).is_some_and(|a| a.contains(&(site.pc, site.arm)))
    }

    pub fn len(&self) -> usize {
        self.arms.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Conditional branch sites present in any recorded IL.
pub fn recorded_branches(traces: &Traces) -> BTreeSet<(u32, usize)> {
    traces
        .all_trees()
        .flat_map(|t| t.nodes.iter().flat_map(move |n| n.il.iter().map(move |e| (t.method, e))))
        .filter(|(_, e)| e.insn.is_conditional())
        .map(|(m, e)| (m, e.pc))
        .collect()
}

/// Uncovered conditional branches: the missing arm of every recorded
/// conditional, ordered by method, pc and arm. A recorded conditional with
/// no observed arm at all contributes both.
pub fn find_ucb(coverage: &CoverageState, traces: &Traces) -> Vec<BranchSite> {
    let mut out = Vec::new();
    for (method, pc) in recorded_branches(traces) {
        for arm in [Arm::FallThrough, Arm::Taken] {
            let site = BranchSite { method, pc, arm };
            if !coverage.covers(&site) {
                out.push(site);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(pc: usize, taken: bool) -> Event {
        Event::BranchOutcome { method: 1, pc, taken, forced: false }
    }

    #[test]
    fn record_counts_new_arms_only() {
        let mut log = ExecutionLog::default();
        log.push(outcome(4, true));
        log.push(outcome(4, true));
        log.push(outcome(8, false));
        let mut c = CoverageState::default();
        assert_eq!(c.record(&log), 2);
        assert_eq!(c.record(&log), 0);
        assert!(c.covers(&BranchSite { method: 1, pc: 4, arm: Arm::Taken }));
        assert!(!c.covers(&BranchSite { method: 1, pc: 4, arm: Arm::FallThrough }));
        let mut other = CoverageState::default();
        let mut l2 = ExecutionLog::default();
        l2.push(outcome(4, false));
        other.record(&l2);
        assert_eq!(c.merge(&other), 1);
        assert_eq!(c.len(), 3);
    }
}
