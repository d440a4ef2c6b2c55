//! Native method registry.
//!
//! Natives are looked up by their `Lpkg/Class;->name` key. Besides host
//! closures (used by tests), a handful of declarative behaviors can be
//! written to a sidecar text file:
//!
//! ```text
//! mdx-natives v1
//! LMain;->log pure
//! LMain;->answer int 42
//! LMain;->secret string 800-123-456
//! LMain;->make object LMain$Impl;
//! LMain;->roll random 6
//! LMain;->patch tamper LMain;->run 0 10:106e,0004,0000
//! LMain;->patch tamper LMain;->run 1 10:106e,0003,0000
//! ```
//!
//! A `tamper` line fires when the first argument equals the given integer
//! (`*` fires unconditionally). Each `pc:units` group becomes one in-place
//! write; multiple lines for the same key accumulate cases.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use mdx_core::{CodeUnit, Container, MethodKind, Value};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::interp::{tamper, TamperError};
use crate::log::ExecutionLog;

pub const NATIVES_HEADER: &str = "mdx-natives v1";

/// Host implementation of a native. Returning `None` means "no result".
pub type HostFn = Arc<dyn Fn(&mut NativeCtx<'_>, &[Value]) -> Result<Option<Value>, String> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TamperCase {
    pub when: Option<i32>,
    pub target: u32,
    pub writes: Vec<(usize, Vec<CodeUnit>)>,
}

#[derive(Clone)]
pub enum NativeBehavior {
    Pure,
    Int(i32),
    Str(u32),
    /// Returns a fresh object of the given class record.
    Object(u32),
    /// Uniform integer in `0..bound` from the run's seeded generator.
    Random(u32),
    Tamper(Vec<TamperCase>),
    Host(HostFn),
}

impl fmt::Debug for NativeBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NativeBehavior::Pure => f.write_str("Pure"),
            NativeBehavior::Int(v) => write!(f, "Int({v})"),
            NativeBehavior::Str(s) => write!(f, "Str({s})"),
            NativeBehavior::Object(c) => write!(f, "Object({c})"),
            NativeBehavior::Random(b) => write!(f, "Random({b})"),
            NativeBehavior::Tamper(cases) => f.debug_tuple("Tamper").field(cases).finish(),
            NativeBehavior::Host(_) => f.write_str("Host(..)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NativeError {
    #[error("natives line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("natives line {line}: unknown {what} `{name}`")]
    Unknown { line: usize, what: &'static str, name: String },
    #[error("host native `{0}` has no text form")]
    NotSerializable(String),
}

/// What a native may touch while it runs: the tamper primitive, object
/// allocation and the run's generator.
pub struct NativeCtx<'a> {
    pub(crate) container: &'a mut Container,
    pub(crate) log: &'a mut ExecutionLog,
    pub(crate) rng: &'a mut ChaCha8Rng,
    pub(crate) next_object: &'a mut u32,
}

impl NativeCtx<'_> {
    pub fn tamper(&mut self, method: u32, pc: usize, units: &[CodeUnit]) -> Result<(), TamperError> {
        tamper(self.container, self.log, method, pc, units)
    }

    pub fn new_object(&mut self, class: u32) -> Value {
        *self.next_object += 1;
        Value::Obj { class, id: *self.next_object }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn container(&self) -> &Container {
        self.container
    }
}

#[derive(Debug, Clone, Default)]
pub struct NativeRegistry {
    entries: BTreeMap<String, NativeBehavior>,
}

impl NativeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, behavior: NativeBehavior) {
        self.entries.insert(key.into(), behavior);
    }

    pub fn host(
        &mut self,
        key: impl Into<String>,
        f: impl Fn(&mut NativeCtx<'_>, &[Value]) -> Result<Option<Value>, String> + Send + Sync + 'static,
    ) {
        self.insert(key, NativeBehavior::Host(Arc::new(f)));
    }

    pub fn get(&self, key: &str) -> Option<&NativeBehavior> {
        self.entries.get(key)
    }

    /// First native method of `c` with no registered behavior.
    pub fn missing(&self, c: &Container) -> Option<String> {
        (0..c.methods.len() as u32)
            .filter(|m| c.methods[*m as usize].kind == MethodKind::Native)
            .map(|m| c.method_key(m))
            .find(|k| !self.entries.contains_key(k))
    }

    pub(crate) fn call(
        &self,
        key: &str,
        ctx: &mut NativeCtx<'_>,
        args: &[Value],
    ) -> Option<Result<Option<Value>, String>> {
        let b = self.entries.get(key)?;
        Some(match b {
            NativeBehavior::Pure => Ok(None),
            NativeBehavior::Int(v) => Ok(Some(Value::Int(*v))),
            NativeBehavior::Str(s) => Ok(Some(Value::Str(*s))),
            NativeBehavior::Object(class) => Ok(Some(ctx.new_object(*class))),
            NativeBehavior::Random(bound) => Ok(Some(Value::Int(ctx.rng.gen_range(0..(*bound).max(1)) as i32))),
            NativeBehavior::Tamper(cases) => {
                let first = args.first().and_then(|v| v.as_int());
                for case in cases.iter().filter(|c| c.when.is_none() || c.when == first) {
                    for (pc, units) in &case.writes {
                        if let Err(e) = ctx.tamper(case.target, *pc, units) {
                            return Some(Err(e.to_string()));
                        }
                    }
                }
                Ok(None)
            }
            NativeBehavior::Host(f) => f(ctx, args),
        })
    }

    /// Parses the sidecar text form, resolving names against `c`.
    pub fn parse(text: &str, c: &Container) -> Result<Self, NativeError> {
        let mut reg = NativeRegistry::new();
        let mut lines = text.lines().enumerate().filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        });
        match lines.next() {
            Some((_, h)) if h.trim() == NATIVES_HEADER => {}
            _ => return Err(NativeError::Parse { line: 1, message: format!("expected `{NATIVES_HEADER}` header") }),
        }
        for (i, line) in lines {
            let line_no = i + 1;
            let perr = |message: String| NativeError::Parse { line: line_no, message };
            let (key, rest) = line.trim().split_once(' ').ok_or_else(|| perr("missing behavior".into()))?;
            let (kind, arg) = rest.split_once(' ').unwrap_or((rest, ""));
            let num = |s: &str| s.trim().parse::<i64>().map_err(|_| perr(format!("bad number `{s}`")));
            let behavior = match kind {
                "pure" => NativeBehavior::Pure,
                "int" => NativeBehavior::Int(num(arg)? as i32),
                "random" => NativeBehavior::Random(num(arg)? as u32),
                "string" => {
                    let s = c.find_string(arg).ok_or_else(|| NativeError::Unknown {
                        line: line_no,
                        what: "string",
                        name: arg.into(),
                    })?;
                    NativeBehavior::Str(s)
                }
                "object" => {
                    let cls = c.find_class(arg.trim()).ok_or_else(|| NativeError::Unknown {
                        line: line_no,
                        what: "class",
                        name: arg.into(),
                    })?;
                    NativeBehavior::Object(cls)
                }
                "tamper" => {
                    let mut parts = arg.split_whitespace();
                    let target_key = parts.next().ok_or_else(|| perr("missing tamper target".into()))?;
                    let target = c.find_method(target_key).ok_or_else(|| NativeError::Unknown {
                        line: line_no,
                        what: "method",
                        name: target_key.into(),
                    })?;
                    let when = match parts.next() {
                        Some("*") => None,
                        Some(w) => Some(num(w)? as i32),
                        None => return Err(perr("missing tamper condition".into())),
                    };
                    let mut writes = Vec::new();
                    for w in parts {
                        let (pc, units) = w.split_once(':').ok_or_else(|| perr(format!("bad write `{w}`")))?;
                        let pc = num(pc)? as usize;
                        let units = units
                            .split(',')
                            .map(|u| u16::from_str_radix(u, 16).map(CodeUnit))
                            .collect::<Result<Vec<_>, _>>()
                            .map_err(|_| perr(format!("bad units in `{w}`")))?;
                        writes.push((pc, units));
                    }
                    let case = TamperCase { when, target, writes };
                    match reg.entries.get_mut(key) {
                        Some(NativeBehavior::Tamper(cases)) => {
                            cases.push(case);
                            continue;
                        }
                        _ => NativeBehavior::Tamper(vec![case]),
                    }
                }
                other => return Err(perr(format!("unknown behavior `{other}`"))),
            };
            reg.entries.insert(key.to_owned(), behavior);
        }
        Ok(reg)
    }

    pub fn to_text(&self, c: &Container) -> Result<String, NativeError> {
        let mut out = format!("{NATIVES_HEADER}\n");
        for (key, b) in &self.entries {
            match b {
                NativeBehavior::Pure => out.push_str(&format!("{key} pure\n")),
                NativeBehavior::Int(v) => out.push_str(&format!("{key} int {v}\n")),
                NativeBehavior::Str(s) => out.push_str(&format!("{key} string {}\n", c.string(*s))),
                NativeBehavior::Object(cls) => {
                    let ty = c.classes[*cls as usize].ty;
                    out.push_str(&format!("{key} object {}\n", c.type_descriptor(ty)));
                }
                NativeBehavior::Random(b) => out.push_str(&format!("{key} random {b}\n")),
                NativeBehavior::Tamper(cases) => {
                    for case in cases {
                        let when = case.when.map_or("*".to_string(), |w| w.to_string());
                        out.push_str(&format!("{key} tamper {} {when}", c.method_key(case.target)));
                        for (pc, units) in &case.writes {
                            let hex: Vec<String> = units.iter().map(|u| u.to_string()).collect();
                            out.push_str(&format!(" {pc}:{}", hex.join(",")));
                        }
                        out.push('\n');
                    }
                }
                NativeBehavior::Host(_) => return Err(NativeError::NotSerializable(key.clone())),
            }
        }
        Ok(out)
    }
}
