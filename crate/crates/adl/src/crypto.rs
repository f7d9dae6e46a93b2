//! Library specifications, a toy computational implementation over
//! bitstrings, and harmonization of libraries with implementations.

use crate::bytecode::{Atom, LibEntry, Program};
use crate::concrete::{seeded, Rng};
use crate::machine::{next_free, Cell, Heap, Val, Value};
use crate::ops::{self, mask, BinOp, RelOp, UnOp};
use crate::split::{Classify, LabelKind, Pts, SsLabel};
use crate::term::{
    combine_models, Bitstring, Destructor, NonceKind, SymOp, SymbolicModel, Term, TermError,
};
use num_traits::ToPrimitive;
use rand::Rng as _;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LibSpecError {
    #[error("`.libspec` entries {a} and {b} for {class}.{mid} can match the same receiver")]
    Overlap {
        class: String,
        mid: String,
        a: usize,
        b: usize,
    },
    #[error("`.libspec` entry {index} names unknown symbolic operation `{symop}`")]
    UnknownSymop { index: usize, symop: String },
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error(transparent)]
    Term(#[from] TermError),
}

/// A resolved library specification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LibSpec {
    pub entries: Vec<(LibEntry, SymOp)>,
}

fn conflicting(a: &[Atom], b: &[Atom]) -> bool {
    a.iter().any(|x| {
        b.iter().any(|y| match (x, y) {
            (Atom::FieldEq(f, n), Atom::FieldEq(g, m)) => f == g && n != m,
            _ => false,
        })
    })
}

/// Whether the object satisfies every atom; `has f` means `f` is set to a non-void value.
pub fn satisfies<V: Val>(cell: &Cell<V>, when: &[Atom]) -> bool {
    let Cell::Object { fields, .. } = cell else {
        return false;
    };
    when.iter().all(|a| match a {
        Atom::FieldEq(f, n) => fields.get(f).and_then(Val::as_num) == Some(*n),
        Atom::Has(f) => fields.get(f).is_some_and(|v| !v.is_void()),
    })
}

impl LibSpec {
    /// Check the program's `.libspec` lines; overlapping predicates are rejected.
    pub fn from_program(p: &Program) -> Result<LibSpec, LibSpecError> {
        let mut entries = Vec::new();
        for (i, e) in p.libspec.iter().enumerate() {
            let op = p
                .symops
                .get(&e.symop)
                .ok_or_else(|| LibSpecError::UnknownSymop {
                    index: i,
                    symop: e.symop.clone(),
                })?;
            for (j, (prev, _)) in entries.iter().enumerate() {
                let prev: &LibEntry = prev;
                if prev.class == e.class && prev.mid == e.mid && !conflicting(&prev.when, &e.when) {
                    return Err(LibSpecError::Overlap {
                        class: e.class.clone(),
                        mid: e.mid.clone(),
                        a: j,
                        b: i,
                    });
                }
            }
            entries.push((e.clone(), op.clone()));
        }
        Ok(LibSpec { entries })
    }

    /// The entry for a call of `mid` on `receiver`, if any.
    pub fn resolve<V: Val>(&self, mid: &str, receiver: &Cell<V>) -> Option<&(LibEntry, SymOp)> {
        let cls = receiver.class()?;
        self.entries
            .iter()
            .find(|(e, _)| e.mid == mid && e.class == cls && satisfies(receiver, &e.when))
    }

    /// The lifted operation `d_<op>(x_1, ...)` for an operator name.
    pub fn operator(name: &str) -> Option<SymOp> {
        let (name, arity) = if let Ok(o) = name.parse::<UnOp>() {
            (o.name(), 1)
        } else if let Ok(o) = name.parse::<BinOp>() {
            (o.name(), 2)
        } else {
            (name.parse::<RelOp>().ok()?.name(), 2)
        };
        Some(SymOp::app(
            &format!("d_{name}"),
            (1..=arity).map(SymOp::param).collect(),
        ))
    }
}

/// Extension models selectable with `.model`.
pub fn extension_model(name: &str) -> Option<SymbolicModel> {
    let m = match name {
        "freeenc" => SymbolicModel::new().with_constructor("enc", 2),
        "symenc" => SymbolicModel::new()
            .with_constructor("enc", 2)
            .and_then(|m| {
                m.with_destructor(Destructor::new(
                    "dec",
                    2,
                    Arc::new(|a: &[Term]| match &a[1] {
                        Term::App(f, xs) if &**f == "enc" && xs[0] == a[0] => Some(xs[1].clone()),
                        _ => None,
                    }),
                ))
            }),
        _ => return None,
    };
    Some(m.expect("extension symbols are distinct"))
}

pub const EXTENSION_MODELS: [&str; 2] = ["freeenc", "symenc"];

/// The ADL-embeddable model for `p` at width `w`, combined with its `.model` extensions.
pub fn program_model(p: &Program, w: u32) -> Result<SymbolicModel, LibSpecError> {
    let mal: Vec<&str> = p.mal.keys().map(String::as_str).collect();
    let mut m = SymbolicModel::adl_embeddable(w, &mal);
    for name in &p.models {
        let ext = extension_model(name).ok_or_else(|| LibSpecError::UnknownModel(name.clone()))?;
        m = combine_models(&m, &ext)?;
    }
    Ok(m)
}

/// A computational implementation: one deterministic function per symbol
/// and a bit length per protocol nonce.
pub trait Impl: Send + Sync {
    fn apply(&self, f: &str, args: &[Bitstring]) -> Option<Bitstring>;
    fn nonce_bits(&self, nonce: &str) -> usize;
}

/// Stand-in implementation: `string_b` prepends a bit, `pair` is a
/// length-prefixed concatenation, `enc` XORs a SHA-256 key stream and
/// prepends a 32-bit tag. It has no security properties.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyImpl {
    pub w: u32,
}

const LEN_BITS: usize = 16;
const TAG_BITS: usize = 32;

fn bytes_of(b: &Bitstring) -> Vec<u8> {
    let mut out = (b.len() as u32).to_be_bytes().to_vec();
    out.extend(
        b.bits()
            .chunks(8)
            .map(|c| c.iter().fold(0u8, |a, &x| (a << 1) | x as u8)),
    );
    out
}

fn hash_bits(parts: &[&[u8]], n: usize) -> Bitstring {
    let mut bits = Vec::with_capacity(n);
    let mut ctr = 0u32;
    while bits.len() < n {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u32).to_be_bytes());
            h.update(p);
        }
        h.update(ctr.to_be_bytes());
        for byte in h.finalize() {
            bits.extend((0..8).rev().map(|i| (byte >> i) & 1 == 1));
        }
        ctr += 1;
    }
    bits.truncate(n);
    Bitstring(bits)
}

fn xor(a: &Bitstring, b: &Bitstring) -> Bitstring {
    Bitstring(a.bits().iter().zip(b.bits()).map(|(x, y)| x ^ y).collect())
}

impl ToyImpl {
    fn constant(name: &str) -> Bitstring {
        Bitstring::from_u64(0xC0, 8).concat(&hash_bits(&[b"const", name.as_bytes()], 24))
    }

    fn tag(k: &Bitstring, m: &Bitstring) -> Bitstring {
        hash_bits(&[b"tag", &bytes_of(k), &bytes_of(m)], TAG_BITS)
    }

    fn stream(k: &Bitstring, tag: &Bitstring, n: usize) -> Bitstring {
        hash_bits(&[b"stream", &bytes_of(k), &bytes_of(tag)], n)
    }

    pub fn pair(a: &Bitstring, b: &Bitstring) -> Option<Bitstring> {
        (a.len() < 1 << LEN_BITS).then(|| {
            Bitstring::from_u64(a.len() as u64, LEN_BITS)
                .concat(a)
                .concat(b)
        })
    }

    fn unpair(p: &Bitstring) -> Option<(Bitstring, Bitstring)> {
        let n = p.slice(0, LEN_BITS)?.to_u64() as usize;
        Some((
            p.slice(LEN_BITS, LEN_BITS + n)?,
            p.slice(LEN_BITS + n, p.len())?,
        ))
    }

    pub fn enc(k: &Bitstring, m: &Bitstring) -> Bitstring {
        let tag = Self::tag(k, m);
        let body = xor(m, &Self::stream(k, &tag, m.len()));
        tag.concat(&body)
    }

    pub fn dec(k: &Bitstring, c: &Bitstring) -> Option<Bitstring> {
        let tag = c.slice(0, TAG_BITS)?;
        let body = c.slice(TAG_BITS, c.len())?;
        let m = xor(&body, &Self::stream(k, &tag, body.len()));
        (Self::tag(k, &m) == tag).then_some(m)
    }

    fn num(&self, b: &Bitstring) -> Option<i64> {
        ops::bits_to_num(b, self.w)
    }

    fn bits(&self, n: i64) -> Bitstring {
        ops::num_to_bits(n, self.w)
    }
}

impl Impl for ToyImpl {
    fn apply(&self, f: &str, a: &[Bitstring]) -> Option<Bitstring> {
        let unstring = |b: bool| {
            let x = &a[0];
            (x.bits().first() == Some(&b)).then(|| Bitstring(x.bits()[1..].to_vec()))
        };
        let prepend = |b: bool| {
            Bitstring(
                std::iter::once(b)
                    .chain(a[0].bits().iter().copied())
                    .collect(),
            )
        };
        Some(match f {
            "emp" => Bitstring::new(),
            "string_0" => prepend(false),
            "string_1" => prepend(true),
            "unstring_0" => unstring(false)?,
            "unstring_1" => unstring(true)?,
            "pair" => Self::pair(&a[0], &a[1])?,
            "fst" => Self::unpair(&a[0])?.0,
            "snd" => Self::unpair(&a[0])?.1,
            "equals" => (a[0] == a[1]).then(|| a[0].clone())?,
            "iszero" => (a[0] == self.bits(0)).then(|| a[0].clone())?,
            "enc" => Self::enc(&a[0], &a[1]),
            "dec" => Self::dec(&a[0], &a[1])?,
            "loc" => Bitstring::from_u64(0xA0, 8).concat(&a[0]),
            "unloc" => {
                let head = a[0].slice(0, 8)?;
                (head == Bitstring::from_u64(0xA0, 8)).then(|| a[0].slice(8, a[0].len()))??
            }
            _ => {
                if let Some(c) = f.strip_prefix("is_") {
                    return (a[0] == Self::constant(c)).then(|| a[0].clone());
                }
                if let Some(op) = f.strip_prefix("d_") {
                    let w = self.w;
                    let xs = a.iter().map(|b| self.num(b)).collect::<Option<Vec<_>>>()?;
                    let r = if let Ok(u) = op.parse::<UnOp>() {
                        u.eval(xs[0], w)
                    } else if let Ok(b) = op.parse::<BinOp>() {
                        b.eval(xs[0], xs[1], w)?
                    } else {
                        op.parse::<RelOp>().ok()?.holds(xs[0], xs[1]) as i64
                    };
                    return Some(self.bits(r));
                }
                if a.is_empty() {
                    return Some(Self::constant(f));
                }
                return None;
            }
        })
    }

    fn nonce_bits(&self, _nonce: &str) -> usize {
        self.w as usize
    }
}

/// Protocol nonces of `op` in post-order, left to right, first occurrences only.
pub fn nonce_order(op: &SymOp) -> Vec<String> {
    fn go(op: &SymOp, out: &mut Vec<String>) {
        match op {
            SymOp::Param(_) => {}
            SymOp::Nonce(n, NonceKind::Protocol) => {
                if !out.iter().any(|x| **x == **n) {
                    out.push(n.to_string());
                }
            }
            SymOp::Nonce(..) => {}
            SymOp::App(_, args) => args.iter().for_each(|a| go(a, out)),
        }
    }
    let mut out = Vec::new();
    go(op, &mut out);
    out
}

/// Draw one nonce of `bits` bits from the stream.
pub fn draw_nonce(rng: &mut Rng, bits: usize) -> Bitstring {
    let mut out = Bitstring::new();
    let mut left = bits;
    while left > 0 {
        let take = left.min(64);
        out = out.concat(&Bitstring::from_u64(
            rng.gen::<u64>() & mask(take as u32),
            take,
        ));
        left -= take;
    }
    out
}

/// Evaluate `op` with fixed nonce values.
pub fn impl_eval_with(
    imp: &dyn Impl,
    op: &SymOp,
    inputs: &[Bitstring],
    nonces: &BTreeMap<String, Bitstring>,
) -> Option<Bitstring> {
    match op {
        SymOp::Param(i) => inputs.get(i - 1).cloned(),
        SymOp::Nonce(n, NonceKind::Protocol) => nonces.get(&**n).cloned(),
        SymOp::Nonce(n, NonceKind::Attacker) => Some(ToyImpl::constant(&format!("?{n}"))),
        SymOp::App(f, args) => {
            let xs = args
                .iter()
                .map(|a| impl_eval_with(imp, a, inputs, nonces))
                .collect::<Option<Vec<_>>>()?;
            imp.apply(f, &xs)
        }
    }
}

/// Evaluate `op` over bitstrings, drawing its nonces from `rng` in [`nonce_order`].
pub fn impl_eval_op(
    imp: &dyn Impl,
    op: &SymOp,
    inputs: &[Bitstring],
    rng: &mut Rng,
) -> Option<Bitstring> {
    let nonces = nonce_order(op)
        .into_iter()
        .map(|n| {
            let b = draw_nonce(rng, imp.nonce_bits(&n));
            (n, b)
        })
        .collect();
    impl_eval_with(imp, op, inputs, &nonces)
}

/// Bitstring carried by a value: numbers at width `w`, or arrays of 0/1 cells.
pub fn value_bits(v: &Value, heap: &Heap<Value>, w: u32) -> Option<Bitstring> {
    match v {
        Value::Num(n) => Some(ops::num_to_bits(*n, w)),
        Value::Loc(l) => match heap.get(l)? {
            Cell::Array { cells } => cells
                .iter()
                .map(|c| match c {
                    Value::Num(0) => Some(false),
                    Value::Num(1) => Some(true),
                    _ => None,
                })
                .collect::<Option<Vec<_>>>()
                .map(Bitstring),
            Cell::Object { .. } => None,
        },
        Value::Void => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToyState {
    Idle,
    Drawing {
        op: SymOp,
        inputs: Vec<Bitstring>,
        heap: Heap<Value>,
        drawn: Vec<Bitstring>,
    },
    Reply(SsLabel),
}

/// A library answering every specified call with the toy implementation;
/// `flip` corrupts one output bit.
pub struct ToyLibrary {
    pub spec: LibSpec,
    pub imp: ToyImpl,
    pub flip: Option<usize>,
}

impl ToyLibrary {
    fn finish(
        &self,
        op: &SymOp,
        inputs: &[Bitstring],
        mut heap: Heap<Value>,
        drawn: &[Bitstring],
    ) -> ToyState {
        let nonces = nonce_order(op)
            .into_iter()
            .zip(drawn.iter().cloned())
            .collect();
        let lo = match impl_eval_with(&self.imp, op, inputs, &nonces) {
            None => Value::Void,
            Some(mut b) => {
                if let Some(i) = self.flip.filter(|i| *i < b.len()) {
                    b.0[i] = !b.0[i];
                }
                let l = next_free(&heap);
                let cells = b.bits().iter().map(|x| Value::Num(*x as i64)).collect();
                heap.insert(l, Cell::Array { cells });
                Value::Loc(l)
            }
        };
        ToyState::Reply(SsLabel::Lr {
            lo,
            up: Value::Void,
            heap,
        })
    }
}

impl Pts for ToyLibrary {
    type S = ToyState;

    fn initial(&self) -> ToyState {
        ToyState::Idle
    }

    fn classify(&self, s: &ToyState) -> Classify<'_, ToyState> {
        match s {
            ToyState::Idle => Classify::Waiting,
            ToyState::Reply(l) => Classify::Nondet(vec![(l.clone(), ToyState::Idle, 1)]),
            ToyState::Drawing {
                op,
                inputs,
                heap,
                drawn,
            } => {
                let order = nonce_order(op);
                if drawn.len() == order.len() {
                    return Classify::Prob(vec![(
                        num_traits::One::one(),
                        self.finish(op, inputs, heap.clone(), drawn),
                        1,
                    )]);
                }
                let bits = self.imp.nonce_bits(&order[drawn.len()]);
                assert!(bits <= 64, "toy nonces fit one draw");
                let s = s.clone();
                Classify::Uniform {
                    bits: bits as u32,
                    pick: Box::new(move |raw| {
                        let mut s = s.clone();
                        if let ToyState::Drawing { drawn, .. } = &mut s {
                            drawn.push(Bitstring::from_u64(raw, bits));
                        }
                        (s, 1)
                    }),
                }
            }
        }
    }

    fn receive(&self, s: &ToyState, l: &SsLabel) -> Option<(ToyState, u64)> {
        let (
            ToyState::Idle,
            SsLabel::Lc {
                fname, args, slice, ..
            },
        ) = (s, l)
        else {
            return None;
        };
        let recv = slice.get(&args.first()?.as_loc()?)?;
        let Some((_, op)) = self.spec.resolve(fname, recv) else {
            return Some((
                ToyState::Reply(SsLabel::Lr {
                    lo: Value::Void,
                    up: Value::Void,
                    heap: slice.clone(),
                }),
                0,
            ));
        };
        let inputs = args[1..]
            .iter()
            .map(|v| value_bits(v, slice, self.imp.w))
            .collect::<Option<Vec<_>>>()?;
        Some((
            ToyState::Drawing {
                op: op.clone(),
                inputs,
                heap: slice.clone(),
                drawn: vec![],
            },
            0,
        ))
    }

    fn alphabet(&self) -> BTreeSet<LabelKind> {
        BTreeSet::from([LabelKind::Lc, LabelKind::Lr])
    }
}

/// A receiver object of `class` satisfying `when`, or `None` if the atoms conflict.
pub fn witness_receiver(class: &str, when: &[Atom]) -> Option<Cell<Value>> {
    let mut fields = BTreeMap::new();
    for a in when {
        if let Atom::FieldEq(f, n) = a {
            fields.insert(f.clone(), Value::Num(*n));
        }
    }
    for a in when {
        if let Atom::Has(f) = a {
            fields.entry(f.clone()).or_insert(Value::Num(1));
        }
    }
    let cell = Cell::Object {
        cls: class.into(),
        fields,
    };
    satisfies(&cell, when).then_some(cell)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub entry: usize,
    pub seed: u64,
    pub inputs: Vec<Bitstring>,
    pub library: Option<Bitstring>,
    pub implementation: Option<Bitstring>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryReport {
    pub entry: usize,
    pub class: String,
    pub mid: String,
    pub symop: String,
    pub covered: bool,
    pub mismatches: u64,
    /// Total variation between the output distributions, ignoring seed pairing.
    pub tv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarmonizeReport {
    pub harmonizes: bool,
    pub samples: u64,
    pub max_tv: f64,
    pub entries: Vec<EntryReport>,
    pub counterexample: Option<Counterexample>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HarmonizeError {
    #[error("library refused the call for entry {0}")]
    Refused(usize),
    #[error("library did not answer entry {0} within {1} steps")]
    NoAnswer(usize, u64),
    #[error("library left the deterministic-given-seed regime at entry {0}")]
    Nondeterministic(usize),
}

const LIB_STEP_LIMIT: u64 = 100_000;

/// Run a library from its initial state on one call, with its draws taken from `rng`.
pub fn library_call<L: Pts>(
    lib: &L,
    lc: &SsLabel,
    rng: &mut Rng,
) -> Result<Option<(Value, Heap<Value>)>, ()> {
    let (mut s, _) = lib.receive(&lib.initial(), lc).ok_or(())?;
    for _ in 0..LIB_STEP_LIMIT {
        s = match lib.classify(&s) {
            Classify::Prob(bs) => {
                let mut u: f64 = rng.gen();
                let last = bs.len() - 1;
                let mut pick = None;
                for (i, (p, x, _)) in bs.into_iter().enumerate() {
                    let p = p.to_f64().unwrap_or(0.0);
                    if u < p || i == last {
                        pick = Some(x);
                        break;
                    }
                    u -= p;
                }
                pick.ok_or(())?
            }
            Classify::Uniform { bits, pick } => pick(rng.gen::<u64>() & mask(bits)).0,
            Classify::Nondet(ls) => {
                return match ls.into_iter().next() {
                    Some((SsLabel::Lr { lo, heap, .. }, ..)) => Ok(Some((lo, heap))),
                    _ => Err(()),
                }
            }
            Classify::Waiting => return Err(()),
            Classify::Stuck(_) => return Ok(None),
        };
    }
    Err(())
}

fn tv_of(
    a: &BTreeMap<Option<Bitstring>, u64>,
    b: &BTreeMap<Option<Bitstring>, u64>,
    n: u64,
) -> f64 {
    let keys: BTreeSet<_> = a.keys().chain(b.keys()).collect();
    keys.into_iter()
        .map(|k| (*a.get(k).unwrap_or(&0) as f64 - *b.get(k).unwrap_or(&0) as f64).abs())
        .sum::<f64>()
        / (2.0 * n as f64)
}

/// Compare a library with the implementation of its specification on
/// `samples` random calls per entry, pairing seeds `seed + i`.
pub fn harmonize_check<L: Pts>(
    lib: &L,
    p: &Program,
    spec: &LibSpec,
    imp: &dyn Impl,
    w: u32,
    samples: u64,
    seed: u64,
) -> Result<HarmonizeReport, HarmonizeError> {
    let mut entries = Vec::new();
    let mut counterexample = None;
    for (idx, (e, op)) in spec.entries.iter().enumerate() {
        let mut rep = EntryReport {
            entry: idx,
            class: e.class.clone(),
            mid: e.mid.clone(),
            symop: e.symop.clone(),
            covered: false,
            mismatches: 0,
            tv: 0.0,
        };
        let recv = witness_receiver(&e.class, &e.when);
        let label = p
            .lookup_direct
            .get(&(e.mid.clone(), e.class.clone()))
            .cloned();
        let (Some(recv), Some(label)) = (recv, label) else {
            entries.push(rep);
            continue;
        };
        if spec.resolve(&e.mid, &recv).map(|(x, _)| x) != Some(e) {
            entries.push(rep);
            continue;
        }
        rep.covered = true;
        let mut args_rng = seeded(seed ^ 0x5eed_a265 ^ idx as u64);
        let (mut lib_out, mut imp_out) = (BTreeMap::new(), BTreeMap::new());
        for i in 0..samples {
            let s = seed.wrapping_add(i);
            let nums: Vec<i64> = (0..op.arity())
                .map(|_| ops::wrap(args_rng.gen::<i64>(), w))
                .collect();
            let inputs: Vec<Bitstring> = nums.iter().map(|n| ops::num_to_bits(*n, w)).collect();
            let mut args = vec![Value::Loc(0)];
            args.extend(nums.iter().map(|n| Value::Num(*n)));
            let lc = SsLabel::Lc {
                fname: e.mid.clone(),
                class: e.class.clone(),
                method: label.clone(),
                args,
                slice: BTreeMap::from([(0, recv.clone())]),
            };
            let got =
                library_call(lib, &lc, &mut seeded(s)).map_err(|_| HarmonizeError::Refused(idx))?;
            let got = got.and_then(|(v, h)| value_bits(&v, &h, w));
            let want = impl_eval_op(imp, op, &inputs, &mut seeded(s));
            if got != want {
                rep.mismatches += 1;
                if counterexample.is_none() {
                    counterexample = Some(Counterexample {
                        entry: idx,
                        seed: s,
                        inputs: inputs.clone(),
                        library: got.clone(),
                        implementation: want.clone(),
                    });
                }
            }
            *lib_out.entry(got).or_insert(0u64) += 1;
            *imp_out.entry(want).or_insert(0u64) += 1;
        }
        rep.tv = tv_of(&lib_out, &imp_out, samples.max(1));
        entries.push(rep);
    }
    Ok(HarmonizeReport {
        harmonizes: entries.iter().all(|e| e.mismatches == 0),
        samples,
        max_tv: entries.iter().map(|e| e.tv).fold(0.0, f64::max),
        entries,
        counterexample,
    })
}
