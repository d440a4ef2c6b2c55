//! Interpreter for mini-DEX containers.
//!
//! [`run_program`] drives a container's entry method and returns the
//! [`ExecutionLog`]. Observers implement [`Hooks`]; they see every executed
//! instruction before its effects and can never change the log.

pub mod interp;
pub mod log;
pub mod natives;
pub mod path;

pub use interp::{
    resolve_reflective, run_program, tamper, tamper_range, CallDisposition, Config, Fault, Hooks, Interpreter, Mode,
    Run, RuntimeError, TamperError, DEFAULT_STEP_BUDGET,
};
pub use log::{Event, ExecutionLog, LogParseError};
pub use natives::{HostFn, NativeBehavior, NativeCtx, NativeError, NativeRegistry, TamperCase};
pub use path::{Arm, BranchSite, PathSpec};
