use std::collections::BTreeMap;
use std::fmt;

use crate::container::{Container, FieldInit};

/// Runtime value held in a register or static field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Value {
    #[default]
    Nil,
    Int(i32),
    /// Index into the container's string pool.
    Str(u32),
    /// Opaque object handle: `class` indexes the class pool.
    Obj {
        class: u32,
        id: u32,
    },
}

impl Value {
    pub fn as_int(self) -> Option<i32> {
        match self {
            Value::Int(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Nil => f.write_str("nil"),
            Value::Int(v) => write!(f, "i:{v}"),
            Value::Str(s) => write!(f, "s:{s}"),
            Value::Obj { class, id } => write!(f, "o:{class}@{id}"),
        }
    }
}

impl std::str::FromStr for Value {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("malformed value `{s}`");
        if s == "nil" {
            return Ok(Value::Nil);
        }
        let (tag, rest) = s.split_once(':').ok_or_else(bad)?;
        match tag {
            "i" => rest.parse().map(Value::Int).map_err(|_| bad()),
            "s" => rest.parse().map(Value::Str).map_err(|_| bad()),
            "o" => {
                let (class, id) = rest.split_once('@').ok_or_else(bad)?;
                Ok(Value::Obj { class: class.parse().map_err(|_| bad())?, id: id.parse().map_err(|_| bad())? })
            }
            _ => Err(bad()),
        }
    }
}

/// Current value of every static field of a container, keyed by field index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StaticFieldTable {
    values: BTreeMap<u32, Value>,
}

impl StaticFieldTable {
    /// Builds the table from the declared initial values.
    pub fn from_container(container: &Container) -> Self {
        let values = container
            .fields
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_static)
            .map(|(i, f)| {
                let v = match f.init {
                    FieldInit::None => Value::Nil,
                    FieldInit::Int(v) => Value::Int(v),
                    FieldInit::Str(s) => Value::Str(s),
                };
                (i as u32, v)
            })
            .collect();
        StaticFieldTable { values }
    }

    pub fn get(&self, field: u32) -> Option<Value> {
        self.values.get(&field).copied()
    }

    /// Writes a static field. Returns `false` if `field` is not static.
    pub fn set(&mut self, field: u32, value: Value) -> bool {
        match self.values.get_mut(&field) {
            Some(slot) => {
                *slot = value;
                true
            }
            None => false,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, Value)> + '_ {
        self.values.iter().map(|(k, v)| (*k, *v))
    }
}
