//! Whole-method memory images at one instant of a run.

use mdx_core::Container;
use mdx_vm::{Event, ExecutionLog};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SnapshotError {
    #[error("ordinal {at} is past the {len} events of the log")]
    OrdinalOutOfRange { at: usize, len: usize },
    #[error("event {ordinal} tampers method {method} outside its body")]
    Inapplicable { ordinal: usize, method: u32 },
}

/// `c` as it was in memory after the first `at` events of `log`: every
/// tamper among them applied in order. `at == log.len()` is the final state.
pub fn snapshot_container(c: &Container, log: &ExecutionLog, at: usize) -> Result<Container, SnapshotError> {
    if at > log.len() {
        return Err(SnapshotError::OrdinalOutOfRange { at, len: log.len() });
    }
    let mut out = c.clone();
    for (ordinal, e) in log.events.iter().take(at).enumerate() {
        if let Event::Tamper { method, start, new, .. } = e {
            let body = out
                .methods
                .get_mut(*method as usize)
                .map(|m| &mut m.body)
                .filter(|b| start + new.len() <= b.len())
                .ok_or(SnapshotError::Inapplicable { ordinal, method: *method })?;
            body[*start..start + new.len()].copy_from_slice(new);
        }
    }
    Ok(out)
}

/// One snapshot per ordinal, `0..=log.len()`, skipping ordinals that would
/// repeat the previous image.
pub fn distinct_snapshots(c: &Container, log: &ExecutionLog) -> Vec<(usize, Container)> {
    let mut out = vec![(0, c.clone())];
    for (i, e) in log.events.iter().enumerate() {
        if e.is_tamper() {
            let snap = snapshot_container(c, log, i + 1).expect("ordinals within the log");
            if out.last().is_some_and(|(_, prev)| prev != &snap) {
                out.push((i + 1, snap));
            }
        }
    }
    out
}
