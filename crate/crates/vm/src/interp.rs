//! The switch interpreter.
//!
//! Frames live on an explicit stack, so guest recursion depth is bounded only
//! by the step budget. Every fetch decodes from the current body: a tamper
//! performed by a callee is seen by the very next fetch at that pc, while an
//! instruction that is already executing finishes with its old encoding.

use mdx_core::{
    decode_instruction, CodeUnit, Container, DecodeError, Instruction, MethodKind, StaticFieldTable, Value,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::log::{Event, ExecutionLog};
use crate::natives::{NativeCtx, NativeRegistry};
use crate::path::PathSpec;

pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TamperError {
    #[error("tamper of method {method} at {start}..{end} exceeds body length {len}")]
    OutOfBounds { method: u32, start: usize, end: usize, len: usize },
    #[error("tamper of method {method} would change body length from {old} to {new}")]
    RefusedWhileLengthChanges { method: u32, old: usize, new: usize },
    #[error("tamper target {0} is not a bytecode method")]
    NotBytecode(u32),
}

/// Overwrites `units.len()` code units of `method` starting at `pc` and logs
/// the write. Bodies never change length.
pub fn tamper(
    c: &mut Container,
    log: &mut ExecutionLog,
    method: u32,
    pc: usize,
    units: &[CodeUnit],
) -> Result<(), TamperError> {
    let end = pc + units.len();
    tamper_range(c, log, method, pc, end, units)
}

/// Replaces `start..end` with `units`, which must be exactly as long.
pub fn tamper_range(
    c: &mut Container,
    log: &mut ExecutionLog,
    method: u32,
    start: usize,
    end: usize,
    units: &[CodeUnit],
) -> Result<(), TamperError> {
    let def = c.methods.get_mut(method as usize).ok_or(TamperError::NotBytecode(method))?;
    if def.kind != MethodKind::Bytecode {
        return Err(TamperError::NotBytecode(method));
    }
    if start > end || end > def.body.len() {
        return Err(TamperError::OutOfBounds { method, start, end, len: def.body.len() });
    }
    if end - start != units.len() {
        return Err(TamperError::RefusedWhileLengthChanges {
            method,
            old: def.body.len(),
            new: def.body.len() - (end - start) + units.len(),
        });
    }
    let old = def.body[start..end].to_vec();
    def.body[start..end].copy_from_slice(units);
    log.push(Event::Tamper { method, start, old, new: units.to_vec() });
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Fault {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("execution ran past the end of the body")]
    FellOffEnd,
    #[error("expected an integer, found {0}")]
    NotAnInt(Value),
    #[error("move-result without a pending result")]
    NoPendingResult,
    #[error("method index {0} out of range")]
    BadMethodIndex(u32),
    #[error("{0} is not an object")]
    NotAnObject(Value),
    #[error("method table index {index} out of range for {len} entries")]
    IndexOutOfRange { index: i64, len: usize },
    #[error("call to method {callee} passes {given} arguments, expected {expected}")]
    ArityMismatch { callee: u32, given: usize, expected: usize },
    #[error("field {0} is not a static field")]
    NotStatic(u32),
    #[error("call to stub method {0}")]
    StubInvoked(u32),
    #[error("no native registered for {0}")]
    UnresolvedNative(String),
    #[error("native {name} failed: {message}")]
    Native { name: String, message: String },
}

impl Fault {
    /// Faults that leave the instruction stream intact can be skipped over.
    fn skippable(&self) -> bool {
        !matches!(self, Fault::Decode(_) | Fault::FellOffEnd)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("unhandled exception in method {method} at pc {pc}: {fault}")]
    UnhandledException { method: u32, pc: usize, fault: Fault, backtrace: Vec<(u32, usize)> },
    #[error("step budget of {budget} exceeded")]
    StepBudgetExceeded { budget: u64, backtrace: Vec<(u32, usize)> },
    #[error("method {0} is not a bytecode method")]
    NotBytecode(u32),
    #[error("method {method} takes {expected} arguments, got {given}")]
    BadArguments { method: u32, expected: usize, given: usize },
    #[error("no native registered for {0}")]
    UnresolvedNative(String),
}

impl RuntimeError {
    /// Innermost-first frames active when the error was raised.
    pub fn backtrace(&self) -> &[(u32, usize)] {
        match self {
            RuntimeError::UnhandledException { backtrace, .. } | RuntimeError::StepBudgetExceeded { backtrace, .. } => {
                backtrace
            }
            _ => &[],
        }
    }
}

/// What a hook wants done with a call about to be made.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallDisposition {
    Proceed,
    /// Skip the call; the caller sees this result.
    Stub(Option<Value>),
    /// Skip the call but apply `writes` to the static table as if the callee
    /// had stored them.
    StubWithWrites {
        result: Option<Value>,
        writes: Vec<(u32, Value)>,
    },
}

/// Observer interface. Every callback runs before the effect it announces.
#[allow(unused_variables)]
pub trait Hooks {
    /// A bytecode frame is about to start; `statics` is the table it sees.
    fn on_enter(&mut self, c: &Container, method: u32, args: &[Value], statics: &StaticFieldTable) {}

    fn on_instruction(&mut self, c: &Container, method: u32, pc: usize, units: &[CodeUnit], insn: &Instruction) {}

    fn on_exit(&mut self, c: &Container, method: u32, result: Option<Value>) {}

    /// An `invoke-idx` at `(method, pc)` resolved to `target`. `depth` counts
    /// the reflective calls on the stack including this one.
    fn on_reflective(&mut self, c: &Container, method: u32, pc: usize, target: u32, depth: u32) {}

    fn on_call(&mut self, c: &Container, caller: u32, pc: usize, callee: u32, args: &[Value]) -> CallDisposition {
        CallDisposition::Proceed
    }

    /// The result of a call from `caller` to `callee` is about to become the
    /// caller's pending result. Fires for bytecode, native and stubbed calls;
    /// `statics` already holds whatever the callee stored.
    fn on_result(
        &mut self,
        c: &Container,
        caller: u32,
        callee: u32,
        result: Option<Value>,
        statics: &StaticFieldTable,
    ) {
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Config {
    pub step_budget: u64,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config { step_budget: DEFAULT_STEP_BUDGET, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Plain,
    Forced(PathSpec),
}

#[derive(Debug, Clone)]
struct Frame {
    method: u32,
    regs: Vec<Value>,
    pc: usize,
    pending: Option<Value>,
    reflective_depth: u32,
}

enum Step {
    Next,
    Jump(usize),
    Called,
    Return(Option<Value>),
}

pub struct Interpreter<'a> {
    container: Container,
    natives: &'a NativeRegistry,
    hooks: Option<&'a mut dyn Hooks>,
    statics: StaticFieldTable,
    log: ExecutionLog,
    rng: ChaCha8Rng,
    next_object: u32,
    budget: u64,
    steps: u64,
    frames: Vec<Frame>,
    forced: Option<(PathSpec, usize)>,
}

impl<'a> Interpreter<'a> {
    pub fn new(container: Container, natives: &'a NativeRegistry, config: Config) -> Self {
        let statics = StaticFieldTable::from_container(&container);
        Interpreter {
            container,
            natives,
            hooks: None,
            statics,
            log: ExecutionLog::default(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            next_object: 0,
            budget: config.step_budget,
            steps: 0,
            frames: Vec::new(),
            forced: None,
        }
    }

    pub fn with_hooks(mut self, hooks: &'a mut dyn Hooks) -> Self {
        self.hooks = Some(hooks);
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.forced = match mode {
            Mode::Plain => None,
            Mode::Forced(p) => Some((p, 0)),
        };
        self
    }

    pub fn container(&self) -> &Container {
        &self.container
    }

    pub fn statics(&self) -> &StaticFieldTable {
        &self.statics
    }

    pub fn statics_mut(&mut self) -> &mut StaticFieldTable {
        &mut self.statics
    }

    pub fn log(&self) -> &ExecutionLog {
        &self.log
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn into_parts(self) -> (Container, ExecutionLog) {
        (self.container, self.log)
    }

    /// Runs `method` to completion and returns its result (`None` for
    /// `return-void`).
    pub fn execute_method(&mut self, method: u32, args: &[Value]) -> Result<Option<Value>, RuntimeError> {
        let def = self.container.methods.get(method as usize).ok_or(RuntimeError::NotBytecode(method))?;
        if def.kind != MethodKind::Bytecode {
            return Err(RuntimeError::NotBytecode(method));
        }
        let expected = self.container.arity(method);
        if args.len() != expected {
            return Err(RuntimeError::BadArguments { method, expected, given: args.len() });
        }
        if let Some(missing) = self.natives.missing(&self.container) {
            return Err(RuntimeError::UnresolvedNative(missing));
        }
        let base = self.frames.len();
        self.push_frame(method, args, 0);
        self.run(base)
    }

    fn push_frame(&mut self, method: u32, args: &[Value], reflective_depth: u32) {
        let n = self.container.methods[method as usize].registers as usize;
        let mut regs = vec![Value::Nil; n];
        regs[..args.len()].copy_from_slice(args);
        if let Some(h) = self.hooks.as_deref_mut() {
            h.on_enter(&self.container, method, args, &self.statics);
        }
        self.frames.push(Frame { method, regs, pc: 0, pending: None, reflective_depth });
    }

    fn backtrace(&self) -> Vec<(u32, usize)> {
        self.frames.iter().rev().map(|f| (f.method, f.pc)).collect()
    }

    fn run(&mut self, base: usize) -> Result<Option<Value>, RuntimeError> {
        loop {
            self.steps += 1;
            if self.steps > self.budget {
                let backtrace = self.backtrace();
                self.frames.truncate(base);
                return Err(RuntimeError::StepBudgetExceeded { budget: self.budget, backtrace });
            }
            let frame = self.frames.last().expect("active frame");
            let (method, pc) = (frame.method, frame.pc);
            let body = &self.container.methods[method as usize].body;
            let fetched = if pc >= body.len() {
                Err(Fault::FellOffEnd)
            } else {
                decode_instruction(body, pc).map_err(Fault::from)
            };
            let mut width = 0;
            let step = match fetched {
                Ok((insn, len)) => {
                    width = len;
                    if let Some(h) = self.hooks.as_deref_mut() {
                        let units = &self.container.methods[method as usize].body[pc..pc + len];
                        h.on_instruction(&self.container, method, pc, units, &insn);
                    }
                    match self.exec(&insn, method, pc, len) {
                        Ok(s) => s,
                        Err(fault) => self.recover(fault, Some((&insn, len)), method, pc)?,
                    }
                }
                Err(fault) => self.recover(fault, None, method, pc)?,
            };
            match step {
                Step::Next => self.frames.last_mut().unwrap().pc += width,
                Step::Jump(t) => self.frames.last_mut().unwrap().pc = t,
                Step::Called => {}
                Step::Return(v) => {
                    self.frames.pop();
                    self.log.push(Event::Return { method });
                    if let Some(h) = self.hooks.as_deref_mut() {
                        h.on_exit(&self.container, method, v);
                    }
                    if self.frames.len() == base {
                        return Ok(v);
                    }
                    let caller = self.frames.last_mut().unwrap();
                    caller.pending = v;
                    let caller = caller.method;
                    if let Some(h) = self.hooks.as_deref_mut() {
                        h.on_result(&self.container, caller, method, v, &self.statics);
                    }
                }
            }
        }
    }

    /// In forced mode, clears the fault: skippable faults continue after the
    /// instruction with its destination set to nil, others return nil from
    /// the method. Outside forced mode the fault is fatal.
    fn recover(
        &mut self,
        fault: Fault,
        insn: Option<(&Instruction, usize)>,
        method: u32,
        pc: usize,
    ) -> Result<Step, RuntimeError> {
        if self.forced.is_none() {
            return Err(RuntimeError::UnhandledException { method, pc, fault, backtrace: self.backtrace() });
        }
        self.log.push(Event::ExceptionCleared { method, pc });
        match insn {
            Some((insn, len)) if fault.skippable() => {
                let frame = self.frames.last_mut().unwrap();
                if let Some(dst) = insn.destination() {
                    frame.regs[dst.index()] = Value::Nil;
                }
                if matches!(insn, Instruction::Invoke { .. } | Instruction::InvokeIdx { .. }) {
                    frame.pending = Some(Value::Nil);
                }
                Ok(Step::Jump(pc + len))
            }
            _ => Ok(Step::Return(Some(Value::Nil))),
        }
    }

    fn int(v: Value) -> Result<i32, Fault> {
        v.as_int().ok_or(Fault::NotAnInt(v))
    }

    fn exec(&mut self, insn: &Instruction, method: u32, pc: usize, len: usize) -> Result<Step, Fault> {
        let frame = self.frames.last_mut().unwrap();
        macro_rules! r {
            ($reg:expr) => {
                frame.regs[$reg.index()]
            };
        }
        match *insn {
            Instruction::Nop => {}
            Instruction::Const { dst, value } => frame.regs[dst.index()] = Value::Int(value as i32),
            Instruction::ConstString { dst, string } => frame.regs[dst.index()] = Value::Str(string as u32),
            Instruction::Move { dst, src } => frame.regs[dst.index()] = r!(src),
            Instruction::AddIntLit8 { dst, src, lit } => {
                let v = Self::int(r!(src))?;
                frame.regs[dst.index()] = Value::Int(v.wrapping_add(lit as i32));
            }
            Instruction::If { cond, a, b, offset } => {
                let forced = match &mut self.forced {
                    Some((path, cursor)) => match path.entries.get(*cursor) {
                        Some(site) if site.method == method && site.pc == pc => {
                            *cursor += 1;
                            Some(site.arm.is_taken())
                        }
                        _ => None,
                    },
                    None => None,
                };
                let taken = match forced {
                    Some(t) => t,
                    None => {
                        let (va, vb) = (r!(a), r!(b));
                        match (va, vb) {
                            (Value::Int(x), Value::Int(y)) => cond.holds(x, y),
                            _ if cond == mdx_core::Cond::Eq => va == vb,
                            _ if cond == mdx_core::Cond::Ne => va != vb,
                            (Value::Int(_), other) | (other, _) => return Err(Fault::NotAnInt(other)),
                        }
                    }
                };
                self.log.push(Event::BranchOutcome { method, pc, taken, forced: forced.is_some() });
                if taken {
                    return Ok(Step::Jump((pc as i64 + offset as i64) as usize));
                }
            }
            Instruction::Goto { offset } => return Ok(Step::Jump((pc as i64 + offset as i64) as usize)),
            Instruction::Goto32 { offset } => return Ok(Step::Jump((pc as i64 + offset as i64) as usize)),
            Instruction::MoveResult { dst } => {
                let v = frame.pending.ok_or(Fault::NoPendingResult)?;
                frame.regs[dst.index()] = v;
            }
            Instruction::SGet { dst, field } => {
                let v = self.statics.get(field as u32).ok_or(Fault::NotStatic(field as u32))?;
                frame.regs[dst.index()] = v;
            }
            Instruction::SPut { src, field } => {
                if !self.statics.set(field as u32, r!(src)) {
                    return Err(Fault::NotStatic(field as u32));
                }
            }
            Instruction::ReturnVoid => return Ok(Step::Return(None)),
            Instruction::Return { src } => return Ok(Step::Return(Some(r!(src)))),
            Instruction::Invoke { method: callee, ref args } => {
                let args: Vec<Value> = args.iter().map(|a| r!(a)).collect();
                let depth = frame.reflective_depth;
                return self.call(method, pc, len, callee as u32, args, depth);
            }
            Instruction::InvokeIdx { obj, index, ref args } => {
                let target = resolve_reflective(&self.container, r!(obj), r!(index))?;
                let args: Vec<Value> = args.iter().map(|a| r!(a)).collect();
                let depth = frame.reflective_depth + 1;
                if let Some(h) = self.hooks.as_deref_mut() {
                    h.on_reflective(&self.container, method, pc, target, depth);
                }
                return self.call(method, pc, len, target, args, depth);
            }
        }
        Ok(Step::Next)
    }

    fn call(
        &mut self,
        caller: u32,
        pc: usize,
        len: usize,
        callee: u32,
        args: Vec<Value>,
        depth: u32,
    ) -> Result<Step, Fault> {
        let def = self.container.methods.get(callee as usize).ok_or(Fault::BadMethodIndex(callee))?;
        let expected = self.container.arity(callee);
        if args.len() != expected {
            return Err(Fault::ArityMismatch { callee, given: args.len(), expected });
        }
        let kind = def.kind;
        self.log.push(Event::Invoke { caller, callee, args: args.clone() });
        if let Some(h) = self.hooks.as_deref_mut() {
            let stubbed = match h.on_call(&self.container, caller, pc, callee, &args) {
                CallDisposition::Proceed => None,
                CallDisposition::Stub(v) => Some(v),
                CallDisposition::StubWithWrites { result, writes } => {
                    for (f, v) in writes {
                        self.statics.set(f, v);
                    }
                    Some(result)
                }
            };
            if let Some(v) = stubbed {
                h.on_result(&self.container, caller, callee, v, &self.statics);
                self.frames.last_mut().unwrap().pending = v;
                return Ok(Step::Jump(pc + len));
            }
        }
        match kind {
            MethodKind::Stub => Err(Fault::StubInvoked(callee)),
            MethodKind::Native => {
                let name = self.container.method_key(callee);
                self.log.push(Event::NativeCall { method: callee, name: name.clone(), args: args.clone() });
                let mut ctx = NativeCtx {
                    container: &mut self.container,
                    log: &mut self.log,
                    rng: &mut self.rng,
                    next_object: &mut self.next_object,
                };
                let result = self
                    .natives
                    .call(&name, &mut ctx, &args)
                    .ok_or_else(|| Fault::UnresolvedNative(name.clone()))?
                    .map_err(|message| Fault::Native { name, message })?;
                let result =
                    if self.container.returns_void(callee) { None } else { Some(result.unwrap_or(Value::Nil)) };
                if let Some(h) = self.hooks.as_deref_mut() {
                    h.on_result(&self.container, caller, callee, result, &self.statics);
                }
                self.frames.last_mut().unwrap().pending = result;
                Ok(Step::Jump(pc + len))
            }
            MethodKind::Bytecode => {
                self.frames.last_mut().unwrap().pc = pc + len;
                self.push_frame(callee, &args, depth);
                Ok(Step::Called)
            }
        }
    }
}

/// Method at position `index` of the method table of `obj`'s class.
pub fn resolve_reflective(c: &Container, obj: Value, index: Value) -> Result<u32, Fault> {
    let Value::Obj { class, .. } = obj else {
        return Err(Fault::NotAnObject(obj));
    };
    let table = &c.classes.get(class as usize).ok_or(Fault::NotAnObject(obj))?.methods;
    let i = index.as_int().ok_or(Fault::NotAnInt(index))? as i64;
    if i < 0 || i as usize >= table.len() {
        return Err(Fault::IndexOutOfRange { index: i, len: table.len() });
    }
    Ok(table[i as usize])
}

/// Result of [`run_program`]. The log is complete even when the run failed.
#[derive(Debug, Clone)]
pub struct Run {
    pub log: ExecutionLog,
    pub outcome: Result<Option<Value>, RuntimeError>,
    /// Memory image after the run, including every tamper.
    pub container: Container,
    pub steps: u64,
}

/// Runs the entry method with `inputs` as its arguments.
pub fn run_program(
    container: &Container,
    natives: &NativeRegistry,
    inputs: &[Value],
    mode: Mode,
    config: Config,
    hooks: Option<&mut dyn Hooks>,
) -> Run {
    let entry = container.entry;
    let mut interp = Interpreter::new(container.clone(), natives, config).with_mode(mode);
    if let Some(h) = hooks {
        interp = interp.with_hooks(h);
    }
    let outcome = interp.execute_method(entry, inputs);
    let steps = interp.steps();
    let (container, log) = interp.into_parts();
    Run { log, outcome, container, steps }
}
