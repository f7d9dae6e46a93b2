//! Dolev-Yao terms, symbolic operations, bitstrings and the textual term grammar.
//!
//! Terms render as `f(t1,...,tn)`; 0-ary applications render bare (`emp`);
//! protocol nonces as `n!name`, attacker nonces as `n?name`; operation
//! parameters as `x_i` (1-based).

mod iota;
mod model;
mod parse;

pub use iota::{iota_decode, iota_encode, is_iota};
pub use model::{
    combine_models, lift_bitstring_fn, lift_partial_bitstring_fn, ArgShape, DestFn, Destructor,
    LocalCheck, SymbolicModel,
};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

pub type Name = Arc<str>;

pub fn name(s: &str) -> Name {
    Arc::from(s)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TermError {
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("symbol `{name}` expects {expected} argument(s), got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("operation needs {needed} input(s), got {got}")]
    MissingInputs { needed: usize, got: usize },
    #[error("symbol `{0}` already defined")]
    Collision(String),
    #[error("parse error at offset {offset}: {msg}")]
    Parse { offset: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SymbolKind {
    Constructor,
    Destructor,
    ProtocolNonce,
    AttackerNonce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NonceKind {
    Protocol,
    Attacker,
}

impl NonceKind {
    fn marker(self) -> char {
        match self {
            NonceKind::Protocol => '!',
            NonceKind::Attacker => '?',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolId {
    pub name: Name,
    pub arity: usize,
    pub kind: SymbolKind,
}

impl SymbolId {
    pub fn constructor(n: &str, arity: usize) -> Self {
        SymbolId {
            name: name(n),
            arity,
            kind: SymbolKind::Constructor,
        }
    }

    pub fn destructor(n: &str, arity: usize) -> Self {
        SymbolId {
            name: name(n),
            arity,
            kind: SymbolKind::Destructor,
        }
    }

    pub fn nonce(n: &str, kind: NonceKind) -> Self {
        SymbolId {
            name: name(n),
            arity: 0,
            kind: match kind {
                NonceKind::Protocol => SymbolKind::ProtocolNonce,
                NonceKind::Attacker => SymbolKind::AttackerNonce,
            },
        }
    }
}

/// A term over constructors and nonces. Destructors never occur inside a term.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Nonce(Name, NonceKind),
    App(Name, Arc<[Term]>),
}

impl Term {
    pub fn app(f: &str, args: Vec<Term>) -> Term {
        Term::App(name(f), args.into())
    }

    pub fn app_named(f: Name, args: Vec<Term>) -> Term {
        Term::App(f, args.into())
    }

    pub fn constant(f: &str) -> Term {
        Term::App(name(f), Arc::from(Vec::new()))
    }

    pub fn protocol_nonce(n: &str) -> Term {
        Term::Nonce(name(n), NonceKind::Protocol)
    }

    pub fn attacker_nonce(n: &str) -> Term {
        Term::Nonce(name(n), NonceKind::Attacker)
    }

    pub fn pair(a: Term, b: Term) -> Term {
        Term::app("pair", vec![a, b])
    }

    pub fn head(&self) -> &str {
        match self {
            Term::Nonce(n, _) | Term::App(n, _) => n,
        }
    }

    pub fn args(&self) -> &[Term] {
        match self {
            Term::Nonce(..) => &[],
            Term::App(_, a) => a,
        }
    }

    pub fn is_app_of(&self, f: &str) -> bool {
        matches!(self, Term::App(n, _) if &**n == f)
    }

    pub fn size(&self) -> usize {
        1 + self.args().iter().map(Term::size).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.args().iter().map(Term::depth).max().unwrap_or(0)
    }

    /// All subterms in post-order, left to right, including `self` last.
    pub fn subterms(&self) -> Vec<&Term> {
        let mut out = Vec::new();
        fn go<'a>(t: &'a Term, out: &mut Vec<&'a Term>) {
            for a in t.args() {
                go(a, out);
            }
            out.push(t);
        }
        go(self, &mut out);
        out
    }

    /// Right-nested pair encoding of a list; `[]` is `emp`, `[t]` is `t`.
    pub fn list(items: &[Term]) -> Term {
        match items {
            [] => Term::constant("emp"),
            [t] => t.clone(),
            [t, rest @ ..] => Term::pair(t.clone(), Term::list(rest)),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Nonce(n, k) => write!(f, "n{}{}", k.marker(), n),
            Term::App(n, args) => {
                write!(f, "{n}")?;
                if !args.is_empty() {
                    write!(f, "(")?;
                    for (i, a) in args.iter().enumerate() {
                        if i > 0 {
                            write!(f, ",")?;
                        }
                        write!(f, "{a}")?;
                    }
                    write!(f, ")")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for Term {
    type Err = TermError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse::parse_term(s)
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A symbolic operation (recipe): a finite tree over constructors,
/// destructors, nonces and parameters `x_i`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SymOp {
    Param(usize),
    Nonce(Name, NonceKind),
    App(Name, Vec<SymOp>),
}

impl SymOp {
    pub fn param(i: usize) -> SymOp {
        assert!(i >= 1, "parameters are 1-based");
        SymOp::Param(i)
    }

    pub fn app(f: &str, args: Vec<SymOp>) -> SymOp {
        SymOp::App(name(f), args)
    }

    pub fn constant(f: &str) -> SymOp {
        SymOp::App(name(f), Vec::new())
    }

    /// Largest parameter index used, 0 when parameter-free.
    pub fn arity(&self) -> usize {
        match self {
            SymOp::Param(i) => *i,
            SymOp::Nonce(..) => 0,
            SymOp::App(_, args) => args.iter().map(SymOp::arity).max().unwrap_or(0),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            SymOp::Param(_) | SymOp::Nonce(..) => 1,
            SymOp::App(_, args) => 1 + args.iter().map(SymOp::depth).max().unwrap_or(0),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            SymOp::Param(_) | SymOp::Nonce(..) => 1,
            SymOp::App(_, args) => 1 + args.iter().map(SymOp::size).sum::<usize>(),
        }
    }

    /// The recipe that rebuilds a constructor-only term.
    pub fn from_term(t: &Term) -> SymOp {
        match t {
            Term::Nonce(n, k) => SymOp::Nonce(n.clone(), *k),
            Term::App(f, args) => {
                SymOp::App(f.clone(), args.iter().map(SymOp::from_term).collect())
            }
        }
    }

    /// Rename every nonce leaf through `f`.
    pub fn map_nonces(&self, f: &dyn Fn(&Name, NonceKind) -> Name) -> SymOp {
        match self {
            SymOp::Param(i) => SymOp::Param(*i),
            SymOp::Nonce(n, k) => SymOp::Nonce(f(n, *k), *k),
            SymOp::App(g, args) => {
                SymOp::App(g.clone(), args.iter().map(|a| a.map_nonces(f)).collect())
            }
        }
    }

    pub fn parse(s: &str) -> Result<SymOp, TermError> {
        parse::parse_symop(s)
    }
}

impl fmt::Display for SymOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymOp::Param(i) => write!(f, "x_{i}"),
            SymOp::Nonce(n, k) => write!(f, "n{}{}", k.marker(), n),
            SymOp::App(n, args) => {
                write!(f, "{n}")?;
                if !args.is_empty() {
                    write!(f, "(")?;
                    for (i, a) in args.iter().enumerate() {
                        if i > 0 {
                            write!(f, ",")?;
                        }
                        write!(f, "{a}")?;
                    }
                    write!(f, ")")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Debug for SymOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for SymOp {
    type Err = TermError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse::parse_symop(s)
    }
}

impl Serialize for SymOp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SymOp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An ordered bit sequence, rendered most significant (leftmost) bit first.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bitstring(pub Vec<bool>);

impl Bitstring {
    pub fn new() -> Self {
        Bitstring(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    /// The low `width` bits of `v`, most significant first.
    pub fn from_u64(v: u64, width: usize) -> Self {
        Bitstring(
            (0..width)
                .rev()
                .map(|i| i < 64 && (v >> i) & 1 == 1)
                .collect(),
        )
    }

    /// Unsigned value of the last 64 bits.
    pub fn to_u64(&self) -> u64 {
        self.0.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
    }

    pub fn concat(&self, other: &Bitstring) -> Bitstring {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Bitstring(v)
    }

    pub fn slice(&self, from: usize, to: usize) -> Option<Bitstring> {
        (from <= to && to <= self.len()).then(|| Bitstring(self.0[from..to].to_vec()))
    }

    /// All bitstrings of exactly `len` bits in increasing numeric order.
    pub fn all_of_len(len: usize) -> impl Iterator<Item = Bitstring> {
        assert!(len < 64);
        (0..(1u64 << len)).map(move |v| Bitstring::from_u64(v, len))
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            write!(f, "{}", if b { '1' } else { '0' })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "\"{self}\"")
    }
}

impl FromStr for Bitstring {
    type Err = TermError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .enumerate()
            .map(|(i, c)| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(TermError::Parse {
                    offset: i,
                    msg: format!("expected bit, found `{c}`"),
                }),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Bitstring)
    }
}

impl Serialize for Bitstring {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Bitstring {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
