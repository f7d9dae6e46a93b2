//! ADL syntax: instructions, methods, programs with lookup tables, and the
//! line-oriented assembly format.

mod parse;
mod render;
mod validate;

pub use parse::{parse, ParseError};
pub use validate::{static_rand_scan, validate, Diagnostic};

use crate::ops::{BinOp, RelOp, UnOp};
use crate::term::SymOp;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Mutex;

pub type Reg = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvokeKind {
    Virtual,
    Super,
    Direct,
    Interface,
    Static,
}

impl InvokeKind {
    pub const ALL: [InvokeKind; 5] = [
        InvokeKind::Virtual,
        InvokeKind::Super,
        InvokeKind::Direct,
        InvokeKind::Interface,
        InvokeKind::Static,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InvokeKind::Virtual => "virtual",
            InvokeKind::Super => "super",
            InvokeKind::Direct => "direct",
            InvokeKind::Interface => "interface",
            InvokeKind::Static => "static",
        }
    }
}

/// Where a malicious method lives; matches the invoke kind used to call it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MalKind {
    Virtual,
    Static,
    Super,
    Direct,
}

impl MalKind {
    pub fn name(self) -> &'static str {
        match self {
            MalKind::Virtual => "virtual",
            MalKind::Static => "static",
            MalKind::Super => "super",
            MalKind::Direct => "direct",
        }
    }

    pub fn matches(self, k: InvokeKind) -> bool {
        matches!(
            (self, k),
            (MalKind::Virtual, InvokeKind::Virtual)
                | (MalKind::Virtual, InvokeKind::Interface)
                | (MalKind::Static, InvokeKind::Static)
                | (MalKind::Super, InvokeKind::Super)
                | (MalKind::Direct, InvokeKind::Direct)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "instr", rename_all = "kebab-case")]
pub enum Instr {
    Move {
        a: Reg,
        b: Reg,
    },
    Const {
        a: Reg,
        n: i64,
    },
    Cmp {
        a: Reg,
        b: Reg,
        c: Reg,
    },
    Unop {
        a: Reg,
        b: Reg,
        op: UnOp,
    },
    Binop {
        a: Reg,
        b: Reg,
        c: Reg,
        op: BinOp,
    },
    ArrayLength {
        a: Reg,
        b: Reg,
    },
    NewArray {
        a: Reg,
        b: Reg,
    },
    FilledNewArray {
        regs: [Reg; 5],
        n: u32,
    },
    FilledNewArrayRange {
        k: Reg,
        n: u32,
    },
    FillArrayData {
        a: Reg,
        data: Vec<i64>,
    },
    Aget {
        a: Reg,
        b: Reg,
        c: Reg,
    },
    Aput {
        a: Reg,
        b: Reg,
        c: Reg,
    },
    Nop,
    Goto {
        n: i64,
    },
    IfTest {
        a: Reg,
        b: Reg,
        n: i64,
        op: RelOp,
    },
    IfTestz {
        a: Reg,
        n: i64,
        op: RelOp,
    },
    InstanceOf {
        a: Reg,
        b: Reg,
        cl: String,
    },
    NewInstance {
        a: Reg,
        cl: String,
    },
    ConstString {
        a: Reg,
        s: String,
    },
    ConstClass {
        a: Reg,
        cl: String,
    },
    Iget {
        a: Reg,
        b: Reg,
        fid: String,
    },
    Iput {
        a: Reg,
        b: Reg,
        fid: String,
    },
    Sget {
        a: Reg,
        fid: String,
    },
    Sput {
        a: Reg,
        fid: String,
    },
    Invoke {
        kind: InvokeKind,
        regs: [Reg; 5],
        n: u32,
        mid: String,
    },
    InvokeRange {
        kind: InvokeKind,
        k: Reg,
        n: u32,
        mid: String,
    },
    MoveResult {
        a: Reg,
    },
    ReturnVoid,
    Return {
        a: Reg,
    },
    Rand {
        a: Reg,
    },
    /// A `-wide` form: kept verbatim, rejected by validation.
    Wide {
        text: String,
    },
}

impl Instr {
    /// Relative branch offsets this instruction may take besides falling through.
    pub fn branch_offsets(&self) -> Vec<i64> {
        match self {
            Instr::Goto { n } => vec![*n],
            Instr::IfTest { n, .. } | Instr::IfTestz { n, .. } => vec![*n, 1],
            Instr::Return { .. } | Instr::ReturnVoid | Instr::Wide { .. } => vec![],
            _ => vec![1],
        }
    }

    /// Argument registers of an invoke in order, honoring the count.
    pub fn invoke_args(&self) -> Option<(InvokeKind, Vec<Reg>, &str)> {
        match self {
            Instr::Invoke { kind, regs, n, mid } => {
                Some((*kind, regs.iter().take(*n as usize).copied().collect(), mid))
            }
            Instr::InvokeRange { kind, k, n, mid } => Some((*kind, (*k..*k + *n).collect(), mid)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Method {
    pub label: String,
    pub is_static: bool,
    pub body: Vec<Instr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDecl {
    pub class: String,
    pub name: String,
    pub is_static: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalDecl {
    pub kind: MalKind,
    pub arity: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Atom {
    FieldEq(String, i64),
    Has(String),
}

/// One `.libspec` line: calls of `mid` on receivers of `class` satisfying
/// every atom resolve to the named symbolic operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibEntry {
    pub class: String,
    pub mid: String,
    pub when: Vec<Atom>,
    pub symop: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LookupTable {
    Static,
    Direct,
    Super,
    Virtual,
}

impl LookupTable {
    pub fn name(self) -> &'static str {
        match self {
            LookupTable::Static => "static",
            LookupTable::Direct => "direct",
            LookupTable::Super => "super",
            LookupTable::Virtual => "virtual",
        }
    }
}

/// Line numbers of parsed instructions; ignored by equality.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SourceMap(pub BTreeMap<String, Vec<usize>>);

impl PartialEq for SourceMap {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for SourceMap {}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub models: Vec<String>,
    pub classes: BTreeSet<String>,
    /// Keyed by field id `Class.name`.
    pub fields: BTreeMap<String, FieldDecl>,
    pub mal: BTreeMap<String, MalDecl>,
    pub symops: BTreeMap<String, SymOp>,
    /// Keyed by method label.
    pub methods: BTreeMap<String, Method>,
    pub lookup_static: BTreeMap<String, String>,
    pub lookup_direct: BTreeMap<(String, String), String>,
    pub lookup_super: BTreeMap<(String, String), String>,
    pub lookup_virtual: BTreeMap<(String, String), String>,
    pub libspec: Vec<LibEntry>,
    #[serde(skip)]
    pub source: SourceMap,
}

pub const ENTRY: &str = "main";

impl Program {
    pub fn entry(&self) -> Option<&Method> {
        self.methods.get(ENTRY)
    }

    /// Field name of a field id.
    pub fn lookup_field(&self, fid: &str) -> Option<&str> {
        self.fields.get(fid).map(|f| f.name.as_str())
    }

    /// Instance fields of a class in declaration-name order.
    pub fn instance_fields(&self, cl: &str) -> Vec<&str> {
        self.fields
            .values()
            .filter(|f| f.class == cl && !f.is_static)
            .map(|f| f.name.as_str())
            .collect()
    }

    pub fn static_fields(&self, cl: &str) -> Vec<&str> {
        self.fields
            .values()
            .filter(|f| f.class == cl && f.is_static)
            .map(|f| f.name.as_str())
            .collect()
    }

    pub fn table(&self, t: LookupTable) -> &BTreeMap<(String, String), String> {
        match t {
            LookupTable::Direct => &self.lookup_direct,
            LookupTable::Super => &self.lookup_super,
            LookupTable::Virtual => &self.lookup_virtual,
            LookupTable::Static => panic!("static lookup is keyed by method id only"),
        }
    }

    /// Resolve a non-static invoke on a receiver of class `cl`.
    pub fn resolve(&self, kind: InvokeKind, mid: &str, cl: &str) -> Option<&Method> {
        let key = (mid.to_string(), cl.to_string());
        let label = match kind {
            InvokeKind::Static => self.lookup_static.get(mid),
            InvokeKind::Direct => self.lookup_direct.get(&key),
            InvokeKind::Super => self.lookup_super.get(&key),
            InvokeKind::Virtual | InvokeKind::Interface => self.lookup_virtual.get(&key),
        }?;
        self.methods.get(label)
    }

    pub fn mal_for(&self, kind: InvokeKind, mid: &str) -> Option<&MalDecl> {
        self.mal.get(mid).filter(|m| m.kind.matches(kind))
    }

    /// Every string literal used by `const-string`, sorted.
    pub fn string_literals(&self) -> BTreeSet<String> {
        self.methods
            .values()
            .flat_map(|m| m.body.iter())
            .filter_map(|i| match i {
                Instr::ConstString { s, .. } => Some(s.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn render(&self) -> String {
        render::render(self)
    }

    pub fn line_of(&self, label: &str, pc: usize) -> Option<usize> {
        self.source.0.get(label).and_then(|v| v.get(pc)).copied()
    }

    /// Labels of methods bound by a `.libspec` entry through lookup-direct.
    pub fn libspec_methods(&self) -> BTreeSet<String> {
        self.libspec
            .iter()
            .filter_map(|e| {
                self.lookup_direct
                    .get(&(e.mid.clone(), e.class.clone()))
                    .cloned()
            })
            .collect()
    }
}

type Generator = Box<dyn Fn(u32) -> Program + Send + Sync>;

/// Programs indexed by a security parameter, generated on demand and cached.
pub struct ProgramFamily {
    generator: Generator,
    cache: Mutex<HashMap<u32, Program>>,
}

impl ProgramFamily {
    pub fn new(generator: impl Fn(u32) -> Program + Send + Sync + 'static) -> Self {
        ProgramFamily {
            generator: Box::new(generator),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn at(&self, eta: u32) -> Program {
        let mut c = self.cache.lock().expect("cache lock");
        c.entry(eta)
            .or_insert_with(|| (self.generator)(eta))
            .clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_is_cached_and_deterministic() {
        let fam = ProgramFamily::new(|eta| {
            parse(&format!(
                ".method static main {{\n const v0, {eta}\n return v0\n}}\n"
            ))
            .unwrap()
        });
        assert_eq!(fam.at(3), fam.at(3));
        assert_ne!(fam.at(3), fam.at(4));
    }

    #[test]
    fn invoke_args_respect_count() {
        let i = Instr::Invoke {
            kind: InvokeKind::Static,
            regs: [3, 4, 5, 6, 7],
            n: 2,
            mid: "f".into(),
        };
        assert_eq!(i.invoke_args().unwrap().1, vec![3, 4]);
        let r = Instr::InvokeRange {
            kind: InvokeKind::Direct,
            k: 2,
            n: 3,
            mid: "g".into(),
        };
        assert_eq!(r.invoke_args().unwrap().1, vec![2, 3, 4]);
    }
}
