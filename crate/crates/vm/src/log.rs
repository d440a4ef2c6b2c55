//! Execution log: the ordered observable events of one run.
//!
//! Text form, one event per line after a `mdx-log v1` header:
//!
//! ```text
//! invoke <caller> <callee> [<value> ...]
//! native <method> <key> [<value> ...]
//! tamper <method> <start> <old-hex,...> <new-hex,...>
//! branch <method> <pc> taken|fallthrough [forced]
//! cleared <method> <pc>
//! return <method>
//! ```
//!
//! Methods and pcs are decimal; code units are four hex digits.

use std::fmt;
use std::str::FromStr;

use mdx_core::{CodeUnit, Value};

pub const LOG_HEADER: &str = "mdx-log v1";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Event {
    /// A call instruction transferred control; the entry call is not logged.
    Invoke {
        caller: u32,
        callee: u32,
        args: Vec<Value>,
    },
    NativeCall {
        method: u32,
        name: String,
        args: Vec<Value>,
    },
    /// Units `start..start + new.len()` of `method` were overwritten.
    Tamper {
        method: u32,
        start: usize,
        old: Vec<CodeUnit>,
        new: Vec<CodeUnit>,
    },
    BranchOutcome {
        method: u32,
        pc: usize,
        taken: bool,
        forced: bool,
    },
    ExceptionCleared {
        method: u32,
        pc: usize,
    },
    Return {
        method: u32,
    },
}

impl Event {
    pub fn is_tamper(&self) -> bool {
        matches!(self, Event::Tamper { .. })
    }
}

fn write_units(f: &mut fmt::Formatter<'_>, units: &[CodeUnit]) -> fmt::Result {
    if units.is_empty() {
        return f.write_str("-");
    }
    for (i, u) in units.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{u}")?;
    }
    Ok(())
}

fn write_values(f: &mut fmt::Formatter<'_>, values: &[Value]) -> fmt::Result {
    for v in values {
        write!(f, " {v}")?;
    }
    Ok(())
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Invoke { caller, callee, args } => {
                write!(f, "invoke {caller} {callee}")?;
                write_values(f, args)
            }
            Event::NativeCall { method, name, args } => {
                write!(f, "native {method} {name}")?;
                write_values(f, args)
            }
            Event::Tamper { method, start, old, new } => {
                write!(f, "tamper {method} {start} ")?;
                write_units(f, old)?;
                f.write_str(" ")?;
                write_units(f, new)
            }
            Event::BranchOutcome { method, pc, taken, forced } => {
                let arm = if *taken { "taken" } else { "fallthrough" };
                write!(f, "branch {method} {pc} {arm}")?;
                if *forced {
                    f.write_str(" forced")?;
                }
                Ok(())
            }
            Event::ExceptionCleared { method, pc } => write!(f, "cleared {method} {pc}"),
            Event::Return { method } => write!(f, "return {method}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LogParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "log line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for LogParseError {}

fn parse_units(s: &str) -> Result<Vec<CodeUnit>, String> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',').map(|u| u16::from_str_radix(u, 16).map(CodeUnit).map_err(|_| format!("bad code unit `{u}`"))).collect()
}

fn num<T: FromStr>(s: Option<&str>) -> Result<T, String> {
    let s = s.ok_or("missing field")?;
    s.parse().map_err(|_| format!("bad number `{s}`"))
}

impl FromStr for Event {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let mut it = line.split_whitespace();
        let kind = it.next().ok_or("empty line")?;
        let ev = match kind {
            "invoke" => Event::Invoke {
                caller: num(it.next())?,
                callee: num(it.next())?,
                args: it.by_ref().map(Value::from_str).collect::<Result<_, _>>()?,
            },
            "native" => Event::NativeCall {
                method: num(it.next())?,
                name: it.next().ok_or("missing native name")?.to_owned(),
                args: it.by_ref().map(Value::from_str).collect::<Result<_, _>>()?,
            },
            "tamper" => Event::Tamper {
                method: num(it.next())?,
                start: num(it.next())?,
                old: parse_units(it.next().ok_or("missing old units")?)?,
                new: parse_units(it.next().ok_or("missing new units")?)?,
            },
            "branch" => {
                let method = num(it.next())?;
                let pc = num(it.next())?;
                let taken = match it.next() {
                    Some("taken") => true,
                    Some("fallthrough") => false,
                    other => return Err(format!("bad branch arm {other:?}")),
                };
                let forced = match it.next() {
                    None => false,
                    Some("forced") => true,
                    Some(other) => return Err(format!("unexpected `{other}`")),
                };
                Event::BranchOutcome { method, pc, taken, forced }
            }
            "cleared" => Event::ExceptionCleared { method: num(it.next())?, pc: num(it.next())? },
            "return" => Event::Return { method: num(it.next())? },
            other => return Err(format!("unknown event `{other}`")),
        };
        if let Some(extra) = it.next() {
            return Err(format!("trailing field `{extra}`"));
        }
        Ok(ev)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExecutionLog {
    pub events: Vec<Event>,
}

impl ExecutionLog {
    pub fn push(&mut self, e: Event) {
        self.events.push(e);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn tamper_count(&self) -> usize {
        self.events.iter().filter(|e| e.is_tamper()).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, LogParseError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == LOG_HEADER => {}
            _ => return Err(LogParseError { line: 1, message: format!("expected `{LOG_HEADER}` header") }),
        }
        let mut events = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let e = line.parse().map_err(|message| LogParseError { line: i + 1, message })?;
            events.push(e);
        }
        Ok(ExecutionLog { events })
    }
}
