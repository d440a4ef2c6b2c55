//! Iterative force execution.
//!
//! Each iteration lists the uncovered conditional branches of everything
//! recorded so far, computes a forced path to each over the recorded code,
//! and replays the program along it with faults cleared and the collector
//! attached. The loop stops once an iteration covers no new arm. Forced runs
//! reuse the seed run's inputs.

pub mod coverage;
pub mod path;

use mdx_collect::{collect_run, DanglingIndex, Traces};
use mdx_core::{Container, Value};
use mdx_vm::{BranchSite, Config, ExecutionLog, Mode, NativeRegistry, PathSpec, RuntimeError};
use thiserror::Error;

pub use coverage::{find_ucb, recorded_branches, CoverageState};
pub use path::{compute_path, RecordedGraph, Unreachable};

pub const DEFAULT_MAX_ITERATIONS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForceError {
    #[error("still finding new arms after {0} iterations")]
    IterationCapExceeded(usize),
    #[error("forced run stopped: {0}")]
    Runtime(RuntimeError),
    #[error(transparent)]
    Dangling(#[from] DanglingIndex),
}

/// One forced replay: its log, what it collected and the arms it added.
#[derive(Debug, Clone)]
pub struct ForcedRun {
    pub path: PathSpec,
    pub log: ExecutionLog,
    pub traces: Traces,
    pub coverage: CoverageState,
}

/// Replays along `path`. A run that exhausts the step budget still reports
/// what it executed; any other failure is a bug since faults are cleared.
pub fn forced_run(
    container: &Container,
    natives: &NativeRegistry,
    inputs: &[Value],
    path: &PathSpec,
    config: Config,
) -> Result<ForcedRun, ForceError> {
    let (run, traces) = collect_run(container, natives, inputs, Mode::Forced(path.clone()), config);
    match run.outcome {
        Ok(_) | Err(RuntimeError::StepBudgetExceeded { .. }) => {}
        Err(e) => return Err(ForceError::Runtime(e)),
    }
    let coverage = CoverageState::from_log(&run.log);
    Ok(ForcedRun { path: path.clone(), log: run.log, traces: traces?, coverage })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForceOptions {
    pub max_iterations: usize,
    pub config: Config,
}

impl Default for ForceOptions {
    fn default() -> Self {
        ForceOptions { max_iterations: DEFAULT_MAX_ITERATIONS, config: Config::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Iteration {
    pub ucbs: Vec<BranchSite>,
    pub paths: Vec<PathSpec>,
    pub unreachable: Vec<BranchSite>,
    pub new_arms: usize,
}

#[derive(Debug, Clone)]
pub struct ForceOutcome {
    pub coverage: CoverageState,
    /// Seed traces merged with everything the forced runs collected.
    pub traces: Traces,
    pub iterations: Vec<Iteration>,
}

impl ForceOutcome {
    pub fn paths(&self) -> impl Iterator<Item = &PathSpec> {
        self.iterations.iter().flat_map(|i| &i.paths)
    }
}

/// Drives [`forced_run`] until an iteration adds no arm. `seed` holds the
/// logs and traces of earlier runs of any kind.
pub fn iterate(
    container: &Container,
    natives: &NativeRegistry,
    inputs: &[Value],
    seed: Vec<(ExecutionLog, Traces)>,
    opts: ForceOptions,
) -> Result<ForceOutcome, ForceError> {
    let mut coverage = CoverageState::default();
    let mut traces: Option<Traces> = None;
    for (log, t) in seed {
        coverage.record(&log);
        match &mut traces {
            Some(all) => all.merge(t),
            None => traces = Some(t),
        }
    }
    let mut traces =
        traces.unwrap_or_else(|| Traces { entry: container.entry, inputs: inputs.to_vec(), ..Traces::default() });
    let mut iterations = Vec::new();
    loop {
        if iterations.len() == opts.max_iterations {
            return Err(ForceError::IterationCapExceeded(opts.max_iterations));
        }
        let ucbs = find_ucb(&coverage, &traces);
        let graph = RecordedGraph::new(&traces);
        let mut it = Iteration { ucbs: ucbs.clone(), paths: Vec::new(), unreachable: Vec::new(), new_arms: 0 };
        for ucb in ucbs {
            // An earlier path of this iteration may have reached it already.
            if coverage.covers(&ucb) {
                continue;
            }
            let path = match compute_path(&traces, &graph, ucb) {
                Ok(p) => p,
                Err(Unreachable(site)) => {
                    it.unreachable.push(site);
                    continue;
                }
            };
            let run = forced_run(container, natives, inputs, &path, opts.config)?;
            it.new_arms += coverage.merge(&run.coverage);
            traces.merge(run.traces);
            it.paths.push(path);
        }
        let done = it.new_arms == 0;
        iterations.push(it);
        if done {
            return Ok(ForceOutcome { coverage, traces, iterations });
        }
    }
}
