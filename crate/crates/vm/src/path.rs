//! Forced-execution paths.
//!
//! ```text
//! mdx-path v1
//! target <method> <pc> taken|fallthrough
//! <method> <pc> taken|fallthrough
//! ...
//! ```

use std::fmt;
use std::str::FromStr;

pub const PATH_HEADER: &str = "mdx-path v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    /// The fall-through arm sorts first.
    FallThrough,
    Taken,
}

impl Arm {
    pub fn from_taken(taken: bool) -> Arm {
        if taken {
            Arm::Taken
        } else {
            Arm::FallThrough
        }
    }

    pub fn is_taken(self) -> bool {
        self == Arm::Taken
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::Taken => Arm::FallThrough,
            Arm::FallThrough => Arm::Taken,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Taken => "taken",
            Arm::FallThrough => "fallthrough",
        })
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "taken" => Ok(Arm::Taken),
            "fallthrough" => Ok(Arm::FallThrough),
            _ => Err(format!("bad arm `{s}`")),
        }
    }
}

/// One conditional branch site and the arm to take there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BranchSite {
    pub method: u32,
    pub pc: usize,
    pub arm: Arm,
}

impl fmt::Display for BranchSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.method, self.pc, self.arm)
    }
}

impl FromStr for BranchSite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let [m, pc, arm] = parts[..] else {
            return Err(format!("expected `<method> <pc> <arm>`, got `{s}`"));
        };
        Ok(BranchSite {
            method: m.parse().map_err(|_| format!("bad method `{m}`"))?,
            pc: pc.parse().map_err(|_| format!("bad pc `{pc}`"))?,
            arm: arm.parse()?,
        })
    }
}

/// Conditional outcomes to impose, in the order the branches are expected to
/// be reached. The last entry forces the target arm.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PathSpec {
    pub target: Option<BranchSite>,
    pub entries: Vec<BranchSite>,
}

impl PathSpec {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{PATH_HEADER}\n");
        if let Some(t) = &self.target {
            out.push_str(&format!("target {t}\n"));
        }
        for e in &self.entries {
            out.push_str(&format!("{e}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(PATH_HEADER) {
            return Err(format!("expected `{PATH_HEADER}` header"));
        }
        let mut spec = PathSpec::default();
        for line in lines {
            if let Some(rest) = line.strip_prefix("target ") {
                spec.target = Some(rest.parse()?);
            } else {
                spec.entries.push(line.parse()?);
            }
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let p = PathSpec {
            target: Some(BranchSite { method: 2, pc: 14, arm: Arm::Taken }),
            entries: vec![
                BranchSite { method: 0, pc: 4, arm: Arm::FallThrough },
                BranchSite { method: 2, pc: 14, arm: Arm::Taken },
            ],
        };
        assert_eq!(PathSpec::parse(&p.to_text()).unwrap(), p);
        assert!(PathSpec::parse("0 4 taken\n").is_err());
    }
}
