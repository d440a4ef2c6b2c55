//! Oracles shared by the integration and acceptance suites.

pub mod record;
pub mod replay;

pub use record::{record, Invocation, Recorder, Recording, Step, Tee};
pub use replay::{check_replay, pure_registry, ReplayReport, REPLAY_STEP_BUDGET};

use mdx_corpus::Generated;
use mdx_reassemble::{reassemble, ReassembleOptions, Reassembled};
use mdx_vm::Mode;

/// Plain recorded run of a generated program and its reassembly.
pub fn pipeline(g: &Generated, opts: ReassembleOptions) -> (Recording, Reassembled) {
    let rec = record(&g.container, &g.natives, g.inputs(), Mode::Plain);
    if let Err(e) = &rec.run.outcome {
        panic!("{}: plain run failed: {e}", g.name);
    }
    let r = reassemble(&rec.traces, opts).unwrap_or_else(|e| panic!("{}: {e}", g.name));
    (rec, r)
}
