//! Seeded generator of small programs with known ground truth.
//!
//! Every generated program lives in `Lcom/test/Main;` (plus `Lcom/test/Impl;`
//! for reflection targets) and ships with a natives table and a
//! [`Manifest`]. Seed 0 of each family is its canonical layout with no random
//! filler; for `self-modifying(1)` that is the leak-through-rewrite example
//! used throughout the tests.

mod builder;
mod families;
pub mod manifest;

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mdx_core::{emit_container, Container, ContainerError, Instruction, Value};
use mdx_vm::NativeRegistry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use builder::{args, Pb};
pub use builder::{DECOY, IMPL, MAIN, SECRET};
use families::{Knobs, ReflectShape};
pub use manifest::{ArmSite, Manifest, ManifestError, TamperStep, MANIFEST_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Benign,
    /// Nesting depth of the rewrites, 1 or 2.
    SelfModifying(u8),
    Reflective,
    /// Depth of the complete decision tree.
    Branchy(u8),
    Mixed,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Benign => f.write_str("benign"),
            Family::SelfModifying(d) => write!(f, "self-modifying({d})"),
            Family::Reflective => f.write_str("reflective"),
            Family::Branchy(k) => write!(f, "branchy({k})"),
            Family::Mixed => f.write_str("mixed"),
        }
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let arg = |prefix: &str| -> Option<Result<u8, String>> {
            let inner = s.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?;
            Some(inner.parse().map_err(|_| format!("bad family parameter in `{s}`")))
        };
        match s {
            "benign" => return Ok(Family::Benign),
            "reflective" => return Ok(Family::Reflective),
            "mixed" => return Ok(Family::Mixed),
            _ => {}
        }
        if let Some(d) = arg("self-modifying") {
            return match d? {
                d @ 1..=2 => Ok(Family::SelfModifying(d)),
                d => Err(format!("self-modifying depth must be 1 or 2, got {d}")),
            };
        }
        if let Some(k) = arg("branchy") {
            return match k? {
                k @ 1..=8 => Ok(Family::Branchy(k)),
                k => Err(format!("branchy depth must be in 1..=8, got {k}")),
            };
        }
        Err(format!("unknown family `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSpec {
    pub family: Family,
    pub seed: u64,
    /// Helper methods in benign programs.
    pub methods: usize,
    /// Rough number of filler instructions per method.
    pub body_len: usize,
    /// Add a never-called leaking method to benign programs.
    pub dead_code: bool,
}

impl CorpusSpec {
    pub fn new(family: Family, seed: u64) -> Self {
        CorpusSpec { family, seed, methods: 3, body_len: 12, dead_code: true }
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub name: String,
    pub container: Container,
    pub natives: NativeRegistry,
    pub manifest: Manifest,
}

impl Generated {
    pub fn inputs(&self) -> &[Value] {
        &self.manifest.inputs
    }

    /// Writes `<name>.mdx`, `<name>.natives` and `<name>.manifest` into `dir`
    /// and returns the container path.
    pub fn write_to(&self, dir: &Path) -> io::Result<PathBuf> {
        let natives =
            self.natives.to_text(&self.container).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let path = dir.join(format!("{}.mdx", self.name));
        let bytes = emit_container(&self.container).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        std::fs::write(&path, bytes)?;
        std::fs::write(dir.join(format!("{}.natives", self.name)), natives)?;
        std::fs::write(dir.join(format!("{}.manifest", self.name)), self.manifest.to_text())?;
        Ok(path)
    }
}

fn file_stem(family: Family, seed: u64) -> String {
    let f = family.to_string().replace(['(', ')'], "");
    format!("{f}-{seed}")
}

/// Entry `onCreate` that calls each component once, passing its own
/// parameters through when the component takes any.
fn entry_calls(pb: &mut Pb, entry: u32, calls: &[(u32, usize)], params: u16) {
    let mut a = mdx_core::Assembler::new();
    for (m, arity) in calls {
        let regs: Vec<u8> = (0..*arity as u8).collect();
        a.emit(Instruction::Invoke { method: *m as u16, args: args(&regs) });
    }
    a.emit(Instruction::ReturnVoid);
    pb.set_body(entry, params, &a);
}

pub fn generate(spec: &CorpusSpec) -> Result<Generated, ContainerError> {
    let mut pb = Pb::new(spec.family.to_string(), spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let canonical = spec.seed == 0;
    let knobs = |rng: &mut ChaCha8Rng| -> ChaCha8Rng {
        // Components draw from a child stream so a canonical component can
        // share a program with random ones.
        ChaCha8Rng::seed_from_u64(rng.gen())
    };

    let entry;
    match spec.family {
        Family::SelfModifying(depth) => {
            entry = pb.bytecode("onCreate", "V", &[]);
            let mut child = knobs(&mut rng);
            let mut k = Knobs { rng: (!canonical).then_some(&mut child), body_len: spec.body_len };
            let m = if depth >= 2 {
                families::self_modifying_2(&mut pb, &mut k, "layeredLeak")
            } else {
                families::self_modifying_1(&mut pb, &mut k, "advancedLeak")
            };
            entry_calls(&mut pb, entry, &[(m, 0)], 0);
        }
        Family::Reflective => {
            entry = pb.bytecode("onCreate", "V", &[]);
            let shape = if canonical {
                ReflectShape { index: 1, both: false, nested: false, direct: false }
            } else {
                ReflectShape {
                    index: rng.gen_range(0..2),
                    both: rng.gen_bool(0.3),
                    nested: rng.gen_bool(0.4),
                    direct: false,
                }
            };
            let mut child = knobs(&mut rng);
            let mut k = Knobs { rng: (!canonical).then_some(&mut child), body_len: spec.body_len };
            let m = families::reflective(&mut pb, &mut k, "reflectLeak", shape);
            entry_calls(&mut pb, entry, &[(m, 0)], 0);
        }
        Family::Branchy(depth) => {
            entry = pb.bytecode("onCreate", "V", &["I"]);
            let m = families::branchy(&mut pb, &mut rng, depth, "decide");
            entry_calls(&mut pb, entry, &[(m, 1)], 1);
            pb.set_inputs(vec![Value::Int(rng.gen_range(-10..=10))]);
        }
        Family::Benign => {
            entry = pb.bytecode("onCreate", "V", &["I", "I"]);
            let helpers = families::benign(&mut pb, &mut rng, spec.methods, spec.body_len);
            families::benign_main(&mut pb, &mut rng, entry, &helpers, spec.body_len);
            if spec.dead_code {
                families::dead_leak(&mut pb);
            }
            pb.set_inputs(vec![Value::Int(rng.gen_range(-20..20)), Value::Int(rng.gen_range(-20..20))]);
        }
        Family::Mixed => {
            entry = pb.bytecode("onCreate", "V", &["I"]);
            let mut child = knobs(&mut rng);
            let mut k = Knobs { rng: (!canonical).then_some(&mut child), body_len: spec.body_len };
            let leak = families::self_modifying_1(&mut pb, &mut k, "advancedLeak");
            let shape = ReflectShape { index: 1, both: false, nested: !canonical && rng.gen_bool(0.5), direct: false };
            let mut child = knobs(&mut rng);
            let mut k = Knobs { rng: (!canonical).then_some(&mut child), body_len: spec.body_len };
            let refl = families::reflective(&mut pb, &mut k, "reflectLeak", shape);
            let decide = families::branchy(&mut pb, &mut rng, 2, "decide");
            entry_calls(&mut pb, entry, &[(leak, 0), (refl, 0), (decide, 1)], 1);
            pb.set_inputs(vec![Value::Int(rng.gen_range(-10..=10))]);
        }
    }
    pb.b.set_entry(entry);
    pb.manifest.flows.dedup();
    finish(pb, file_stem(spec.family, spec.seed))
}

fn finish(pb: Pb, name: String) -> Result<Generated, ContainerError> {
    let Pb { b, natives, manifest, .. } = pb;
    let container = b.finish()?;
    Ok(Generated { name, container, natives, manifest })
}

fn canonical(family: Family) -> Generated {
    generate(&CorpusSpec::new(family, 0)).expect("canonical programs are well formed")
}

/// The canonical self-modifying example: `advancedLeak` loops twice, the
/// first iteration rewrites `normal(v0)` into `sink(v0)` and the source call
/// into a constant load, the second restores the original code.
pub fn leak_through_rewrite() -> Generated {
    canonical(Family::SelfModifying(1))
}

/// Canonical reflective program and its twin with the reflective call
/// replaced by a direct call to the same target.
pub fn reflective_pair() -> (Generated, Generated) {
    let reflective = canonical(Family::Reflective);
    let mut pb = Pb::new("reflective-direct".into(), 0);
    let entry = pb.bytecode("onCreate", "V", &[]);
    let mut k = Knobs { rng: None, body_len: 0 };
    let shape = ReflectShape { index: 1, both: false, nested: false, direct: true };
    let m = families::reflective(&mut pb, &mut k, "reflectLeak", shape);
    entry_calls(&mut pb, entry, &[(m, 0)], 0);
    pb.b.set_entry(entry);
    let direct = finish(pb, "reflective-direct-0".into()).expect("canonical programs are well formed");
    (reflective, direct)
}

/// A branch that only forcing can take guards a tamper producing a leak.
pub fn guarded_tamper() -> Generated {
    let mut pb = Pb::new("guarded-tamper".into(), 0);
    let entry = pb.bytecode("onCreate", "V", &["I"]);
    let m = families::guarded_tamper(&mut pb, "maybePatch");
    entry_calls(&mut pb, entry, &[(m, 1)], 1);
    pb.b.set_entry(entry);
    finish(pb, "guarded-tamper-0".into()).expect("canonical programs are well formed")
}

/// `count` programs of `family` with seeds `first..first + count`.
pub fn generate_batch(family: Family, first: u64, count: u64) -> Result<Vec<Generated>, ContainerError> {
    (first..first + count).map(|s| generate(&CorpusSpec::new(family, s))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_round_trip() {
        for f in [
            Family::Benign,
            Family::SelfModifying(1),
            Family::SelfModifying(2),
            Family::Reflective,
            Family::Branchy(6),
            Family::Mixed,
        ] {
            assert_eq!(f.to_string().parse::<Family>().unwrap(), f);
        }
        assert!("self-modifying(3)".parse::<Family>().is_err());
        assert!("branchy(x)".parse::<Family>().is_err());
        assert!("weird".parse::<Family>().is_err());
    }

    #[test]
    fn canonical_rewrite_layout() {
        let g = leak_through_rewrite();
        let c = &g.container;
        let names: Vec<_> = (0..c.methods.len() as u32).map(|m| c.method_name(m).to_owned()).collect();
        assert_eq!(names, ["onCreate", "advancedLeak", "normal", "sink", "getSensitiveData", "bytecodeTamper"]);
        assert_eq!(c.methods[1].body.len(), 0x15);
        assert_eq!(g.manifest.flows.len(), 1);
        assert_eq!(g.manifest.tampers.len(), 2);
        assert_eq!(g.manifest.tampers[0].len, 0xd);
    }

    #[test]
    fn same_seed_same_program() {
        for family in [Family::Benign, Family::Mixed, Family::Reflective, Family::SelfModifying(2)] {
            let a = generate(&CorpusSpec::new(family, 11)).unwrap();
            let b = generate(&CorpusSpec::new(family, 11)).unwrap();
            assert_eq!(a.container, b.container);
            assert_eq!(a.manifest, b.manifest);
        }
    }

    #[test]
    fn branchy_lists_every_arm() {
        let g = generate(&CorpusSpec::new(Family::Branchy(3), 4)).unwrap();
        assert_eq!(g.manifest.arms.len(), 2 * 7);
    }
}
