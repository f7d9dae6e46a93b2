//! Frames, heap and the value-generic ADL rules shared by the concrete,
//! split-state and symbolic machines.

use crate::bytecode::{Instr, InvokeKind, Program, Reg};
use crate::ops::{wrap, RelOp};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Debug, Display};
use std::hash::Hash;

pub type Loc = u64;

/// A value domain the common rules can move around.
pub trait Val: Clone + Eq + Ord + Hash + Debug + Display {
    fn num(n: i64) -> Self;
    fn as_num(&self) -> Option<i64>;
    fn loc(l: Loc) -> Self;
    fn as_loc(&self) -> Option<Loc>;
    fn void() -> Self;

    fn is_void(&self) -> bool {
        *self == Self::void()
    }

    /// Low half of a return value.
    fn lo(&self) -> Self {
        self.clone()
    }

    /// High half of a return value; only wide values use it.
    fn up(&self) -> Self {
        Self::void()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Value {
    Num(i64),
    Loc(Loc),
    Void,
}

impl Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(n) => write!(f, "{n}"),
            Value::Loc(l) => write!(f, "@{l}"),
            Value::Void => f.write_str("void"),
        }
    }
}

impl std::str::FromStr for Value {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "void" => Ok(Value::Void),
            _ => match s.strip_prefix('@') {
                Some(l) => l
                    .parse()
                    .map(Value::Loc)
                    .map_err(|_| format!("bad location `{s}`")),
                None => s
                    .parse()
                    .map(Value::Num)
                    .map_err(|_| format!("bad value `{s}`")),
            },
        }
    }
}

impl Val for Value {
    fn num(n: i64) -> Self {
        Value::Num(n)
    }
    fn as_num(&self) -> Option<i64> {
        match self {
            Value::Num(n) => Some(*n),
            _ => None,
        }
    }
    fn loc(l: Loc) -> Self {
        Value::Loc(l)
    }
    fn as_loc(&self) -> Option<Loc> {
        match self {
            Value::Loc(l) => Some(*l),
            _ => None,
        }
    }
    fn void() -> Self {
        Value::Void
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cell<V> {
    Object {
        cls: String,
        fields: BTreeMap<String, V>,
    },
    Array {
        cells: Vec<V>,
    },
}

impl<V: Val> Cell<V> {
    pub fn class(&self) -> Option<&str> {
        match self {
            Cell::Object { cls, .. } => Some(cls),
            Cell::Array { .. } => None,
        }
    }

    pub fn values(&self) -> Box<dyn Iterator<Item = &V> + '_> {
        match self {
            Cell::Object { fields, .. } => Box::new(fields.values()),
            Cell::Array { cells } => Box::new(cells.iter()),
        }
    }

    pub fn map<W>(&self, f: &mut impl FnMut(&V) -> W) -> Cell<W> {
        match self {
            Cell::Object { cls, fields } => Cell::Object {
                cls: cls.clone(),
                fields: fields.iter().map(|(k, v)| (k.clone(), f(v))).collect(),
            },
            Cell::Array { cells } => Cell::Array {
                cells: cells.iter().map(f).collect(),
            },
        }
    }
}

pub type Heap<V> = BTreeMap<Loc, Cell<V>>;

/// Smallest location id not in use.
pub fn next_free<V>(h: &Heap<V>) -> Loc {
    let mut l = 0;
    for k in h.keys() {
        if *k != l {
            break;
        }
        l += 1;
    }
    l
}

/// Locations reachable from `l` by following object fields; arrays are leaves.
pub fn lreachable<V: Val>(h: &Heap<V>, l: Loc) -> BTreeSet<Loc> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![l];
    while let Some(l) = stack.pop() {
        let Some(c) = h.get(&l) else { continue };
        if !seen.insert(l) {
            continue;
        }
        if let Cell::Object { fields, .. } = c {
            stack.extend(fields.values().filter_map(Val::as_loc));
        }
    }
    seen
}

pub fn heap_slice<V: Val>(h: &Heap<V>, l: Loc) -> Heap<V> {
    lreachable(h, l)
        .into_iter()
        .map(|k| (k, h[&k].clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Regs<V> {
    /// Void entries are left out.
    pub regs: BTreeMap<Reg, V>,
    pub res_lo: V,
    pub res_up: V,
}

impl<V: Val> Regs<V> {
    /// Arguments in `v0..`, everything else void.
    pub fn def_reg(args: Vec<V>) -> Self {
        let mut r = Regs {
            regs: BTreeMap::new(),
            res_lo: V::void(),
            res_up: V::void(),
        };
        for (i, a) in args.into_iter().enumerate() {
            r.set(i as Reg, a);
        }
        r
    }

    pub fn get(&self, r: Reg) -> V {
        self.regs.get(&r).cloned().unwrap_or_else(V::void)
    }

    pub fn set(&mut self, r: Reg, v: V) {
        if v.is_void() {
            self.regs.remove(&r);
        } else {
            self.regs.insert(r, v);
        }
    }

    pub fn map<W: Val>(&self, f: &mut impl FnMut(&V) -> W) -> Regs<W> {
        let mut out = Regs::def_reg(vec![]);
        for (k, v) in &self.regs {
            out.set(*k, f(v));
        }
        out.res_lo = f(&self.res_lo);
        out.res_up = f(&self.res_up);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Frame<V> {
    pub method: String,
    pub pp: usize,
    pub regs: Regs<V>,
}

/// An intermediate state without attacker payload; the top frame is last.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Machine<V> {
    pub frames: Vec<Frame<V>>,
    pub heap: Heap<V>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstName {
    Class(String),
    Static(String),
    Str(String),
}

/// Constant locations for classes, static-field holders and string literals.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConstPool {
    pub refs: BTreeMap<ConstName, Loc>,
}

impl ConstPool {
    pub fn build<V: Val>(p: &Program) -> (ConstPool, Heap<V>) {
        let mut pool = ConstPool::default();
        let mut heap = Heap::new();
        let mut alloc = |name: ConstName, cell: Cell<V>, heap: &mut Heap<V>| {
            let l = heap.len() as Loc;
            heap.insert(l, cell);
            pool.refs.insert(name, l);
        };
        for cl in &p.classes {
            let obj = Cell::Object {
                cls: "Class".into(),
                fields: BTreeMap::new(),
            };
            alloc(ConstName::Class(cl.clone()), obj, &mut heap);
            let statics = p.static_fields(cl);
            if !statics.is_empty() {
                let holder = Cell::Object {
                    cls: cl.clone(),
                    fields: statics
                        .into_iter()
                        .map(|f| (f.to_string(), V::num(0)))
                        .collect(),
                };
                alloc(ConstName::Static(cl.clone()), holder, &mut heap);
            }
        }
        for s in p.string_literals() {
            let obj = Cell::Object {
                cls: "String".into(),
                fields: BTreeMap::new(),
            };
            alloc(ConstName::Str(s), obj, &mut heap);
        }
        (pool, heap)
    }

    /// `nameToReference` for a static field id.
    pub fn static_holder(&self, p: &Program, fid: &str) -> Option<Loc> {
        let f = p.fields.get(fid)?;
        self.refs.get(&ConstName::Static(f.class.clone())).copied()
    }
}

/// Entry frame of `main` with the given initial registers.
pub fn initial_machine<V: Val>(p: &Program, regs: &BTreeMap<Reg, V>) -> (ConstPool, Machine<V>) {
    let (pool, heap) = ConstPool::build(p);
    let mut r = Regs::def_reg(vec![]);
    for (k, v) in regs {
        r.set(*k, v.clone());
    }
    let frames = vec![Frame {
        method: crate::bytecode::ENTRY.into(),
        pp: 0,
        regs: r,
    }];
    (pool, Machine { frames, heap })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Stuck {
    pub rule: String,
    pub reason: String,
}

impl Display for Stuck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stuck in {}: {}", self.rule, self.reason)
    }
}

/// What the common step did, or what it hands back to the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transition<V> {
    /// An ordinary rule was applied in place at cost 1.
    Applied(&'static str),
    /// `rand v_a` at the top frame; the caller writes the register and advances.
    Rand(Reg),
    /// Call of a malicious method.
    Mal {
        mid: String,
        args: Vec<V>,
    },
    /// Direct call into a library-bound method.
    Lib {
        mid: String,
        class: String,
        label: String,
        args: Vec<V>,
        receiver: Loc,
    },
    /// Return from the only frame.
    Final(V),
    Stuck(Stuck),
}

pub struct Ctx<'p> {
    pub p: &'p Program,
    pub w: u32,
    pub pool: &'p ConstPool,
    /// Stop at direct calls into library-bound methods.
    pub lib_boundary: bool,
}

fn stuck<V>(rule: &str, reason: impl Into<String>) -> Transition<V> {
    Transition::Stuck(Stuck {
        rule: rule.into(),
        reason: reason.into(),
    })
}

/// Rule name family of an instruction, used in stuck reports.
pub fn rule_name(i: &Instr) -> &'static str {
    match i {
        Instr::Move { .. } => "rMove",
        Instr::Const { .. } => "rConst",
        Instr::Cmp { .. } => "rCmp",
        Instr::Unop { .. } => "rUnop",
        Instr::Binop { .. } => "rBinop",
        Instr::ArrayLength { .. } => "rArrayLength",
        Instr::NewArray { .. } => "rNewArray",
        Instr::FilledNewArray { .. } => "rFilledNewArray",
        Instr::FilledNewArrayRange { .. } => "rFilledNewArrayR",
        Instr::FillArrayData { .. } => "rFillArrayData",
        Instr::Aget { .. } => "rAget",
        Instr::Aput { .. } => "rAput",
        Instr::Nop => "rNop",
        Instr::Goto { .. } => "rGoto",
        Instr::IfTest { .. } => "IfTest",
        Instr::IfTestz { .. } => "IfTestz",
        Instr::InstanceOf { .. } => "rInstanceOf",
        Instr::NewInstance { .. } => "rNewInstance",
        Instr::ConstString { .. } => "rConstString",
        Instr::ConstClass { .. } => "rConstClass",
        Instr::Iget { .. } => "rIget",
        Instr::Iput { .. } => "rIput",
        Instr::Sget { .. } => "rSget",
        Instr::Sput { .. } => "rSput",
        Instr::Invoke { .. } | Instr::InvokeRange { .. } => "rInvoke",
        Instr::MoveResult { .. } => "rMoveR",
        Instr::ReturnVoid => "rReturnV",
        Instr::Return { .. } => "rReturn",
        Instr::Rand { .. } => "Prob",
        Instr::Wide { .. } => "wide",
    }
}

/// Largest array a `new-array` may allocate.
pub const MAX_ARRAY: i64 = 1 << 16;

impl<V: Val> Machine<V> {
    pub fn top(&self) -> &Frame<V> {
        self.frames.last().expect("non-final machine has a frame")
    }

    pub fn top_mut(&mut self) -> &mut Frame<V> {
        self.frames
            .last_mut()
            .expect("non-final machine has a frame")
    }

    pub fn reg(&self, r: Reg) -> V {
        self.top().regs.get(r)
    }

    pub fn set(&mut self, r: Reg, v: V) {
        self.top_mut().regs.set(r, v);
    }

    pub fn advance(&mut self, by: i64) {
        let f = self.top_mut();
        f.pp = (f.pp as i64 + by) as usize;
    }

    /// Store a call result and move past the call site.
    pub fn resume(&mut self, lo: V, up: V) {
        let f = self.top_mut();
        f.regs.res_lo = lo;
        f.regs.res_up = up;
        f.pp += 1;
    }

    pub fn current<'p>(&self, p: &'p Program) -> Option<&'p Instr> {
        let f = self.frames.last()?;
        let before = f.pp as i64;
        if before < 0 {
            return None;
        }
        p.methods.get(&f.method)?.body.get(f.pp)
    }

    /// Heap location the current instruction dereferences, if any.
    pub fn accessed_loc(&self, ctx: &Ctx<'_>) -> Option<Loc> {
        let r = match self.current(ctx.p)? {
            Instr::ArrayLength { b, .. }
            | Instr::InstanceOf { b, .. }
            | Instr::Aget { b, .. }
            | Instr::Aput { b, .. }
            | Instr::Iget { b, .. }
            | Instr::Iput { b, .. } => *b,
            Instr::FillArrayData { a, .. } => *a,
            Instr::Sget { fid, .. } | Instr::Sput { fid, .. } => {
                return ctx.pool.static_holder(ctx.p, fid)
            }
            i @ (Instr::Invoke { .. } | Instr::InvokeRange { .. }) => {
                *i.invoke_args()?.1.first()?
            }
            _ => return None,
        };
        self.reg(r).as_loc()
    }

    fn alloc(&mut self, cell: Cell<V>) -> Loc {
        let l = next_free(&self.heap);
        self.heap.insert(l, cell);
        l
    }

    fn object_mut(&mut self, l: &V) -> Option<(&String, &mut BTreeMap<String, V>)> {
        match self.heap.get_mut(&l.as_loc()?)? {
            Cell::Object { cls, fields } => Some((cls, fields)),
            Cell::Array { .. } => None,
        }
    }

    fn array_mut(&mut self, l: &V) -> Option<&mut Vec<V>> {
        match self.heap.get_mut(&l.as_loc()?)? {
            Cell::Array { cells } => Some(cells),
            Cell::Object { .. } => None,
        }
    }

    fn pop_return(&mut self, v: V) -> Transition<V> {
        if self.frames.len() == 1 {
            return Transition::Final(v);
        }
        self.frames.pop();
        self.resume(v.lo(), v.up());
        Transition::Applied(if v.is_void() { "rReturnV" } else { "rReturn" })
    }

    /// Apply the rule for the current instruction; side effects happen in place
    /// only for [`Transition::Applied`].
    pub fn step(&mut self, ctx: &Ctx<'_>) -> Transition<V> {
        let Some(instr) = self.current(ctx.p) else {
            return stuck("fetch", "program point outside method");
        };
        let rule = rule_name(instr);
        let w = ctx.w;
        let num = |m: &Self, r: Reg| m.reg(r).as_num();
        match instr {
            Instr::Move { a, b } => {
                let v = self.reg(*b);
                self.set(*a, v);
            }
            Instr::Const { a, n } => self.set(*a, V::num(wrap(*n, w))),
            Instr::Cmp { a, b, c } => {
                let (Some(x), Some(y)) = (num(self, *b), num(self, *c)) else {
                    return stuck(rule, "non-numeric operand");
                };
                self.set(*a, V::num(x.cmp(&y) as i64));
            }
            Instr::Unop { a, b, op } => {
                let Some(x) = num(self, *b) else {
                    return stuck(rule, "non-numeric operand");
                };
                self.set(*a, V::num(op.eval(x, w)));
            }
            Instr::Binop { a, b, c, op } => {
                let (Some(x), Some(y)) = (num(self, *b), num(self, *c)) else {
                    return stuck(rule, "non-numeric operand");
                };
                let Some(z) = op.eval(x, y, w) else {
                    return stuck(rule, "division by zero");
                };
                self.set(*a, V::num(z));
            }
            Instr::ArrayLength { a, b } => {
                let r = self.reg(*b);
                let Some(cells) = self.array_mut(&r) else {
                    return stuck(rule, "not an array");
                };
                let n = cells.len() as i64;
                self.set(*a, V::num(n));
            }
            Instr::NewArray { a, b } => {
                let Some(n) = num(self, *b).filter(|n| (0..=MAX_ARRAY).contains(n)) else {
                    return stuck(rule, "bad array length");
                };
                let l = self.alloc(Cell::Array {
                    cells: vec![V::num(0); n as usize],
                });
                self.set(*a, V::loc(l));
            }
            Instr::FilledNewArray { regs, n } => {
                if *n > 5 {
                    return stuck(rule, "count exceeds 5");
                }
                let cells = regs[..*n as usize].iter().map(|r| self.reg(*r)).collect();
                let l = self.alloc(Cell::Array { cells });
                self.top_mut().regs.res_lo = V::loc(l);
            }
            Instr::FilledNewArrayRange { k, n } => {
                let cells = (*k..*k + *n).map(|r| self.reg(r)).collect();
                let l = self.alloc(Cell::Array { cells });
                self.top_mut().regs.res_lo = V::loc(l);
            }
            Instr::FillArrayData { a, data } => {
                let r = self.reg(*a);
                let Some(cells) = self.array_mut(&r) else {
                    return stuck(rule, "not an array");
                };
                if cells.len() < data.len() {
                    return stuck(rule, "array too short");
                }
                for (c, d) in cells.iter_mut().zip(data) {
                    *c = V::num(wrap(*d, w));
                }
            }
            Instr::Aget { a, b, c } => {
                let (r, i) = (self.reg(*b), num(self, *c));
                let Some(cells) = self.array_mut(&r) else {
                    return stuck(rule, "not an array");
                };
                let Some(v) = i
                    .and_then(|i| usize::try_from(i).ok())
                    .and_then(|i| cells.get(i))
                else {
                    return stuck(rule, "index out of bounds");
                };
                let v = v.clone();
                self.set(*a, v);
            }
            Instr::Aput { a, b, c } => {
                let (v, r, i) = (self.reg(*a), self.reg(*b), num(self, *c));
                let Some(cells) = self.array_mut(&r) else {
                    return stuck(rule, "not an array");
                };
                let Some(slot) = i
                    .and_then(|i| usize::try_from(i).ok())
                    .and_then(|i| cells.get_mut(i))
                else {
                    return stuck(rule, "index out of bounds");
                };
                *slot = v;
            }
            Instr::Nop => {}
            Instr::Goto { n } => {
                self.advance(*n);
                return Transition::Applied(rule);
            }
            Instr::IfTest { a, b, n, op } => {
                let Some(t) = relate(*op, &self.reg(*a), &self.reg(*b)) else {
                    return stuck(rule, "operands not comparable");
                };
                self.advance(if t { *n } else { 1 });
                return Transition::Applied(if t { "IfTestT" } else { "IfTestF" });
            }
            Instr::IfTestz { a, n, op } => {
                let Some(t) = relate(*op, &self.reg(*a), &V::num(0)) else {
                    return stuck(rule, "operand not comparable");
                };
                self.advance(if t { *n } else { 1 });
                return Transition::Applied(if t { "IfTestzT" } else { "IfTestzF" });
            }
            Instr::InstanceOf { a, b, cl } => {
                let Some(c) = self.reg(*b).as_loc().and_then(|l| self.heap.get(&l)) else {
                    return stuck(rule, "not a heap reference");
                };
                let t = c.class() == Some(cl.as_str());
                self.set(*a, V::num(t as i64));
            }
            Instr::NewInstance { a, cl } => {
                let fields = ctx
                    .p
                    .instance_fields(cl)
                    .into_iter()
                    .map(|f| (f.to_string(), V::num(0)))
                    .collect();
                let l = self.alloc(Cell::Object {
                    cls: cl.clone(),
                    fields,
                });
                self.set(*a, V::loc(l));
            }
            Instr::ConstString { a, s } => {
                let Some(l) = ctx.pool.refs.get(&ConstName::Str(s.clone())) else {
                    return stuck(rule, "unknown string constant");
                };
                self.set(*a, V::loc(*l));
            }
            Instr::ConstClass { a, cl } => {
                let Some(l) = ctx.pool.refs.get(&ConstName::Class(cl.clone())) else {
                    return stuck(rule, "unknown class constant");
                };
                self.set(*a, V::loc(*l));
            }
            Instr::Iget { a, b, fid } => {
                let Some(f) = ctx.p.lookup_field(fid) else {
                    return stuck(rule, "unknown field");
                };
                let r = self.reg(*b);
                let Some(v) = self.object_mut(&r).and_then(|(_, fs)| fs.get(f).cloned()) else {
                    return stuck(rule, "no such field on receiver");
                };
                self.set(*a, v);
            }
            Instr::Iput { a, b, fid } => {
                let Some(f) = ctx.p.lookup_field(fid) else {
                    return stuck(rule, "unknown field");
                };
                let (v, r) = (self.reg(*a), self.reg(*b));
                let Some(slot) = self.object_mut(&r).and_then(|(_, fs)| fs.get_mut(f)) else {
                    return stuck(rule, "no such field on receiver");
                };
                *slot = v;
            }
            Instr::Sget { a, fid } => {
                let (Some(f), Some(l)) =
                    (ctx.p.lookup_field(fid), ctx.pool.static_holder(ctx.p, fid))
                else {
                    return stuck(rule, "unknown static field");
                };
                let Some(v) = self
                    .object_mut(&V::loc(l))
                    .and_then(|(_, fs)| fs.get(f).cloned())
                else {
                    return stuck(rule, "static holder not in heap");
                };
                self.set(*a, v);
            }
            Instr::Sput { a, fid } => {
                let (Some(f), Some(l)) =
                    (ctx.p.lookup_field(fid), ctx.pool.static_holder(ctx.p, fid))
                else {
                    return stuck(rule, "unknown static field");
                };
                let v = self.reg(*a);
                let Some(slot) = self
                    .object_mut(&V::loc(l))
                    .and_then(|(_, fs)| fs.get_mut(f))
                else {
                    return stuck(rule, "static holder not in heap");
                };
                *slot = v;
            }
            Instr::Invoke { .. } | Instr::InvokeRange { .. } => return self.invoke(ctx, instr),
            Instr::MoveResult { a } => {
                let v = self.top().regs.res_lo.clone();
                self.set(*a, v);
            }
            Instr::ReturnVoid => return self.pop_return(V::void()),
            Instr::Return { a } => {
                let v = self.reg(*a);
                return self.pop_return(v);
            }
            Instr::Rand { a } => return Transition::Rand(*a),
            Instr::Wide { .. } => return stuck(rule, "wide variants are unsupported"),
        }
        self.advance(1);
        Transition::Applied(rule)
    }

    fn invoke(&mut self, ctx: &Ctx<'_>, instr: &Instr) -> Transition<V> {
        let (kind, regs, mid) = instr.invoke_args().expect("invoke instruction");
        let args: Vec<V> = regs.iter().map(|r| self.reg(*r)).collect();
        if ctx.p.mal_for(kind, mid).is_some() {
            return Transition::Mal {
                mid: mid.to_string(),
                args,
            };
        }
        let target = if kind == InvokeKind::Static {
            ctx.p.resolve(kind, mid, "")
        } else {
            let Some(receiver) = args.first().and_then(V::as_loc) else {
                return stuck("rInvoke", "receiver is not a reference");
            };
            let Some(cls) = self
                .heap
                .get(&receiver)
                .and_then(Cell::class)
                .map(str::to_string)
            else {
                return stuck("rInvoke", "receiver is not an object");
            };
            let m = ctx.p.resolve(kind, mid, &cls);
            if ctx.lib_boundary
                && kind == InvokeKind::Direct
                && ctx.p.libspec.iter().any(|e| e.class == cls && e.mid == mid)
            {
                let Some(m) = m else {
                    return stuck("rIDR", "library method without lookup entry");
                };
                return Transition::Lib {
                    mid: mid.to_string(),
                    class: cls,
                    label: m.label.clone(),
                    args,
                    receiver,
                };
            }
            m
        };
        let Some(m) = target else {
            return stuck("rInvoke", format!("no {} target for `{mid}`", kind.name()));
        };
        self.frames.push(Frame {
            method: m.label.clone(),
            pp: 0,
            regs: Regs::def_reg(args),
        });
        Transition::Applied(match kind {
            InvokeKind::Static => "rISt",
            InvokeKind::Direct => "rIDR",
            InvokeKind::Super => "rISu",
            InvokeKind::Virtual | InvokeKind::Interface => "rIVR",
        })
    }
}

/// `rop` on two values: numbers compare as integers, other values only by (in)equality.
pub fn relate<V: Val>(op: RelOp, a: &V, b: &V) -> Option<bool> {
    match (a.as_num(), b.as_num()) {
        (Some(x), Some(y)) => Some(op.holds(x, y)),
        _ => match op {
            RelOp::Eq => Some(a == b),
            RelOp::Ne => Some(a != b),
            _ => None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obj(fields: &[(&str, Value)]) -> Cell<Value> {
        Cell::Object {
            cls: "C".into(),
            fields: fields
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        }
    }

    #[test]
    fn reachability_cases() {
        let mut h: Heap<Value> = Heap::new();
        h.insert(
            0,
            Cell::Array {
                cells: vec![Value::Loc(1)],
            },
        );
        h.insert(1, obj(&[("f", Value::Loc(2))]));
        h.insert(2, obj(&[("g", Value::Loc(1)), ("a", Value::Loc(0))]));
        assert_eq!(lreachable(&h, 0), BTreeSet::from([0]));
        assert_eq!(lreachable(&h, 9), BTreeSet::new());
        assert_eq!(lreachable(&h, 1), BTreeSet::from([0, 1, 2]));
        assert_eq!(heap_slice(&h, 0).len(), 1);
    }

    #[test]
    fn allocation_fills_gaps() {
        let mut h: Heap<Value> = Heap::new();
        assert_eq!(next_free(&h), 0);
        h.insert(0, Cell::Array { cells: vec![] });
        h.insert(2, Cell::Array { cells: vec![] });
        assert_eq!(next_free(&h), 1);
    }

    fn closure(h: &Heap<Value>, l: Loc) -> BTreeSet<Loc> {
        if !h.contains_key(&l) {
            return BTreeSet::new();
        }
        let mut set = BTreeSet::from([l]);
        loop {
            let before = set.len();
            let next: Vec<Loc> = set
                .iter()
                .flat_map(|k| match &h[k] {
                    Cell::Object { fields, .. } => {
                        fields.values().filter_map(Val::as_loc).collect()
                    }
                    Cell::Array { .. } => vec![],
                })
                .filter(|k| h.contains_key(k))
                .collect();
            set.extend(next);
            if set.len() == before {
                return set;
            }
        }
    }

    proptest! {
        #[test]
        fn reachability_matches_closure(
            edges in prop::collection::vec(prop::collection::vec(0u64..8, 0..3), 1..8),
            arrays in prop::collection::vec(any::<bool>(), 8),
            start in 0u64..9,
        ) {
            let mut h: Heap<Value> = Heap::new();
            for (i, out) in edges.iter().enumerate() {
                let vals: Vec<Value> = out.iter().map(|l| Value::Loc(*l)).collect();
                let cell = if arrays[i] {
                    Cell::Array { cells: vals }
                } else {
                    Cell::Object {
                        cls: "C".into(),
                        fields: vals.into_iter().enumerate().map(|(j, v)| (format!("f{j}"), v)).collect(),
                    }
                };
                h.insert(i as Loc, cell);
            }
            prop_assert_eq!(lreachable(&h, start), closure(&h, start));
        }
    }
}
