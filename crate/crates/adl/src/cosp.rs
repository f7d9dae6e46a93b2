//! CoSP protocol trees: the lazy embedding of an ADL program, symbolic and
//! computational executions of trees, and tree export.
//!
//! A node's position is the edge-index path from the root. Computation
//! nodes have a yes edge (0) and a no edge (1); input and output nodes have
//! one edge; control nodes have one edge per in-metadata label, sorted.
//! Node ids are the position plus the honest state resumed at the node.

use crate::bytecode::{Instr, Program, Reg};
use crate::concrete::{AdvInput, AdvResponse, AdvState, Attacker, Rng};
use crate::crypto::{
    draw_nonce, program_model, value_bits, Impl, LibSpec, LibSpecError, ToyImpl, ToyLibrary,
};
use crate::deduction::{View, ViewEvent};
use crate::machine::{
    initial_machine, Cell, ConstPool, Ctx, Frame, Heap, Machine, Transition, Val, Value,
};
use crate::ops::{bits_to_num, num_to_bits, BinOp, RelOp, UnOp};
use crate::split::{
    compose3, AttackerPts, Classify, HState, HonestPts, LabelKind, Pts, SsLabel, FINAL_CALL,
};
use crate::symbolic::LOC_BITS;
use crate::symbolic::{
    branch_term, fresh_nonces, value_term, Choice, Phase, SymStep, SymValue, SymVm,
};
use crate::term::{iota_encode, Bitstring, NonceKind, SymOp, SymbolicModel, Term};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::fmt::Debug;
use thiserror::Error;

pub type Position = Vec<u32>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NodeKind {
    /// A constructor, destructor or (with `nonce`) a protocol nonce.
    Computation {
        symbol: String,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        nonce: bool,
        args: Vec<Position>,
    },
    Input,
    Output {
        label: String,
        refs: Vec<Position>,
    },
    Control {
        out_meta: Bitstring,
        labels: Vec<Bitstring>,
    },
    /// A leaf.
    Stop {
        reason: String,
    },
}

impl NodeKind {
    pub fn arity(&self) -> usize {
        match self {
            NodeKind::Computation { .. } => 2,
            NodeKind::Input | NodeKind::Output { .. } => 1,
            NodeKind::Control { labels, .. } => labels.len(),
            NodeKind::Stop { .. } => 0,
        }
    }
}

/// Honest state in force at a node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreeState {
    pub phase: Phase,
    pub lib_calls: u64,
}

/// What follows an edge: a planned node, honest execution from a state, or a leaf.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cont {
    Run(TreeState),
    Node(Box<Planned>),
    Stop(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Planned {
    pub kind: NodeKind,
    pub payload: Option<TreeState>,
    pub edges: Vec<Cont>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub pos: Position,
    pub kind: NodeKind,
    /// Resumed state stored in the id of input and computation nodes.
    pub payload: Option<TreeState>,
    /// State the honest execution was expanded from, when this node starts a run.
    pub entered: Option<TreeState>,
    pub edges: Vec<Cont>,
}

pub trait TreeNode: Clone + Debug {
    fn pos(&self) -> &Position;
    fn kind(&self) -> &NodeKind;
}

impl TreeNode for Node {
    fn pos(&self) -> &Position {
        &self.pos
    }
    fn kind(&self) -> &NodeKind {
        &self.kind
    }
}

pub trait LazyTree {
    type Node: TreeNode;
    fn root(&self) -> Result<Self::Node, EmbedError>;
    fn child(&self, n: &Self::Node, edge: usize) -> Result<Self::Node, EmbedError>;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EmbedError {
    #[error("honest step is not internally deterministic at {0}")]
    Nondeterministic(String),
    #[error("node {pos:?} has no edge {edge}")]
    NoEdge { pos: Position, edge: usize },
    #[error("reference {target:?} from {from:?} is not a yes-ancestor")]
    BadReference { from: Position, target: Position },
    #[error(transparent)]
    LibSpec(#[from] LibSpecError),
}

/// Whether `target` is a computation or input ancestor of `from` through its first edge.
pub fn legal_reference(from: &[u32], target: &[u32]) -> bool {
    from.len() > target.len() && from.starts_with(target) && from[target.len()] == 0
}

fn check_refs(pos: &Position, kind: &NodeKind) -> Result<(), EmbedError> {
    let refs: &[Position] = match kind {
        NodeKind::Computation { args, .. } => args,
        NodeKind::Output { refs, .. } => refs,
        _ => &[],
    };
    for r in refs {
        if !legal_reference(pos, r) {
            return Err(EmbedError::BadReference {
                from: pos.clone(),
                target: r.clone(),
            });
        }
    }
    Ok(())
}

/// Nodes laid out along first edges from a start position.
struct Chain {
    cur: Position,
    items: Vec<(NodeKind, Option<TreeState>, Option<Cont>)>,
    memo: BTreeMap<Term, Position>,
}

impl Chain {
    fn new(pos: Position) -> Self {
        Chain {
            cur: pos,
            items: Vec::new(),
            memo: BTreeMap::new(),
        }
    }

    fn branch(&self, pos: Position) -> Self {
        Chain {
            cur: pos,
            items: Vec::new(),
            memo: self.memo.clone(),
        }
    }

    fn next(&self) -> Position {
        self.cur.clone()
    }

    fn push(&mut self, kind: NodeKind, payload: Option<TreeState>, no: Option<Cont>) -> Position {
        let p = self.cur.clone();
        self.items.push((kind, payload, no));
        self.cur.push(0);
        p
    }

    fn comp(
        &mut self,
        symbol: &str,
        nonce: bool,
        args: Vec<Position>,
        no: Option<Cont>,
    ) -> Position {
        self.push(
            NodeKind::Computation {
                symbol: symbol.to_string(),
                nonce,
                args,
            },
            None,
            no,
        )
    }

    /// The representation chain of a term, post-order left to right.
    fn term(&mut self, t: &Term) -> Position {
        if let Some(p) = self.memo.get(t) {
            return p.clone();
        }
        let p = match t {
            Term::Nonce(n, _) => self.comp(n, true, vec![], None),
            Term::App(f, args) => {
                let refs = args.iter().map(|a| self.term(a)).collect();
                self.comp(f, false, refs, None)
            }
        };
        self.memo.insert(t.clone(), p.clone());
        p
    }

    fn value(&mut self, v: &SymValue, w: u32) -> Position {
        match v {
            SymValue::Pos(q) => q.clone(),
            _ => self.term(&value_term(v, w).expect("non-position values have terms")),
        }
    }

    fn op(
        &mut self,
        op: &SymOp,
        args: &[Position],
        fail: &str,
        memo: &mut BTreeMap<SymOp, Position>,
    ) -> Position {
        if let Some(p) = memo.get(op) {
            return p.clone();
        }
        let p = match op {
            SymOp::Param(i) => args[i - 1].clone(),
            SymOp::Nonce(n, _) => self.comp(n, true, vec![], None),
            SymOp::App(f, xs) => {
                let refs = xs.iter().map(|x| self.op(x, args, fail, memo)).collect();
                self.comp(f, false, refs, Some(Cont::Stop(fail.to_string())))
            }
        };
        memo.insert(op.clone(), p.clone());
        p
    }

    fn finish(self, tail: Cont) -> Cont {
        let mut acc = tail;
        for (kind, payload, no) in self.items.into_iter().rev() {
            let edges = match kind {
                NodeKind::Computation { .. } => {
                    vec![acc, no.unwrap_or_else(|| Cont::Stop("bottom".into()))]
                }
                _ => vec![acc],
            };
            acc = Cont::Node(Box::new(Planned {
                kind,
                payload,
                edges,
            }));
        }
        acc
    }
}

fn run_state(m: Machine<SymValue>, lib_calls: u64) -> TreeState {
    TreeState {
        phase: Phase::Run(m),
        lib_calls,
    }
}

/// The embedding of a program as a lazily expanded protocol tree.
pub struct Embedding<'p> {
    pub p: &'p Program,
    pub w: u32,
    pub pool: ConstPool,
    pub spec: LibSpec,
    pub model: SymbolicModel,
    /// Honest steps allowed between two nodes.
    pub max_steps: u64,
    init: Machine<SymValue>,
}

impl<'p> Embedding<'p> {
    pub fn new(p: &'p Program, w: u32, regs: &BTreeMap<Reg, SymValue>) -> Result<Self, EmbedError> {
        let (pool, init) = initial_machine(p, regs);
        Ok(Embedding {
            p,
            w,
            pool,
            spec: LibSpec::from_program(p)?,
            model: program_model(p, w)?,
            max_steps: 100_000,
            init,
        })
    }

    fn ctx(&self) -> Ctx<'_> {
        Ctx {
            p: self.p,
            w: self.w,
            pool: &self.pool,
            lib_boundary: true,
        }
    }

    fn materialize(&self, cont: &Cont, pos: Position) -> Result<Node, EmbedError> {
        let (planned, entered) = match cont {
            Cont::Run(st) => (self.plan(st, &pos), Some(st.clone())),
            other => (other.clone(), None),
        };
        let node = match planned {
            Cont::Node(pl) => Node {
                pos,
                kind: pl.kind,
                payload: pl.payload,
                entered,
                edges: pl.edges,
            },
            Cont::Stop(reason) => Node {
                pos,
                kind: NodeKind::Stop { reason },
                payload: None,
                entered,
                edges: vec![],
            },
            Cont::Run(_) => unreachable!("planning always yields a node"),
        };
        check_refs(&node.pos, &node.kind)?;
        Ok(node)
    }

    /// Run the honest semantics from `st` until the next node.
    fn plan(&self, st: &TreeState, pos: &Position) -> Cont {
        let w = self.w;
        let mut m = match &st.phase {
            Phase::Done => return Cont::Stop("done".into()),
            Phase::Stuck(r) => return Cont::Stop(r.clone()),
            Phase::Returned { .. } => {
                let mut c = Chain::new(pos.clone());
                let r = c.term(&Term::constant(FINAL_CALL));
                c.push(
                    NodeKind::Output {
                        label: FINAL_CALL.into(),
                        refs: vec![r],
                    },
                    None,
                    None,
                );
                c.push(NodeKind::Input, None, None);
                return c.finish(Cont::Stop("final".into()));
            }
            Phase::Run(m) => m.clone(),
        };
        let lib = st.lib_calls;
        for _ in 0..self.max_steps {
            let Some(instr) = m.current(self.p).cloned() else {
                return Cont::Stop("fetch: program point outside method".into());
            };
            let non_d = |vs: &[SymValue]| {
                vs.iter()
                    .any(|v| v.as_num().is_none() && v.as_loc().is_none() && !v.is_void())
            };
            match &instr {
                Instr::Unop { a, b, op } if non_d(&[m.reg(*b)]) => {
                    return self.lifted(pos, &m, lib, *a, &[m.reg(*b)], op.name());
                }
                Instr::Binop { a, b, c, op } if non_d(&[m.reg(*b), m.reg(*c)]) => {
                    return self.lifted(pos, &m, lib, *a, &[m.reg(*b), m.reg(*c)], op.name());
                }
                Instr::IfTest { a, b, n, op } if non_d(&[m.reg(*a), m.reg(*b)]) => {
                    return self.if_test(pos, &m, lib, &[m.reg(*a), m.reg(*b)], *n, *op);
                }
                Instr::IfTestz { a, n, op } if non_d(&[m.reg(*a)]) => {
                    return self.if_test(pos, &m, lib, &[m.reg(*a), SymValue::Num(0)], *n, *op);
                }
                Instr::Cmp { a, b, c } if non_d(&[m.reg(*b), m.reg(*c)]) => {
                    let mut ch = Chain::new(pos.clone());
                    let refs = [m.reg(*b), m.reg(*c)]
                        .iter()
                        .map(|v| ch.value(v, w))
                        .collect();
                    ch.push(
                        NodeKind::Output {
                            label: "c_cmp".into(),
                            refs,
                        },
                        None,
                        None,
                    );
                    let q = ch.push(NodeKind::Input, None, None);
                    let tail = self.cmp_tail(ch.branch(ch.next()), &q, &m, lib, *a, &[-1, 0, 1]);
                    return ch.finish(tail);
                }
                Instr::Rand { .. } => {
                    return Cont::Stop("Prob: honest program draws randomness".into())
                }
                _ => {}
            }
            match m.step(&self.ctx()) {
                Transition::Applied(_) => {}
                Transition::Rand(_) => {
                    return Cont::Stop("Prob: honest program draws randomness".into())
                }
                Transition::Mal { mid, args } => {
                    let mut ch = Chain::new(pos.clone());
                    let refs = args.iter().map(|v| ch.value(v, w)).collect();
                    ch.push(
                        NodeKind::Output {
                            label: format!("mal_{mid}"),
                            refs,
                        },
                        None,
                        None,
                    );
                    let q = ch.next();
                    let mut m2 = m.clone();
                    m2.resume(SymValue::Pos(q.clone()), SymValue::Void);
                    let st2 = run_state(m2, lib);
                    ch.push(NodeKind::Input, Some(st2.clone()), None);
                    return ch.finish(Cont::Run(st2));
                }
                Transition::Lib {
                    mid,
                    class,
                    args,
                    receiver,
                    ..
                } => {
                    let f = m.top();
                    let site = format!("{}:{}", f.method, f.pp);
                    let entry = m
                        .heap
                        .get(&receiver)
                        .and_then(|c| self.spec.resolve(&mid, c));
                    let Some((_, op)) = entry else {
                        return Cont::Stop(format!(
                            "rIDR-s: no library entry for {class}.{mid} matches the receiver at {site}"
                        ));
                    };
                    let op = fresh_nonces(op, lib);
                    let mut ch = Chain::new(pos.clone());
                    let refs: Vec<Position> = args.iter().skip(1).map(|v| ch.value(v, w)).collect();
                    let before = ch.items.len();
                    let fail = format!("rIDR-s: {class}.{mid} at {site} evaluates to bottom");
                    let r = ch.op(&op, &refs, &fail, &mut BTreeMap::new());
                    let mut m2 = m.clone();
                    m2.resume(SymValue::Pos(r.clone()), SymValue::Void);
                    let st2 = run_state(m2, lib + 1);
                    if ch.items.len() > before && ch.cur[..ch.cur.len() - 1] == r[..] {
                        ch.items.last_mut().expect("pushed").1 = Some(st2.clone());
                    }
                    return ch.finish(Cont::Run(st2));
                }
                Transition::Final(v) => {
                    let st2 = TreeState {
                        phase: Phase::Returned {
                            value: v,
                            heap: m.heap.clone(),
                        },
                        lib_calls: lib,
                    };
                    return self.plan(&st2, pos);
                }
                Transition::Stuck(s) => return Cont::Stop(s.to_string()),
            }
        }
        Cont::Stop("step budget exhausted".into())
    }

    /// Lifted operator node; its no edge asks the adversary.
    fn lifted(
        &self,
        pos: &Position,
        m: &Machine<SymValue>,
        lib: u64,
        a: Reg,
        ops: &[SymValue],
        name: &str,
    ) -> Cont {
        let mut ch = Chain::new(pos.clone());
        let refs: Vec<Position> = ops.iter().map(|v| ch.value(v, self.w)).collect();
        let cpos = ch.next();
        let mut no = ch.branch(cpos.iter().copied().chain([1]).collect());
        no.push(
            NodeKind::Output {
                label: format!("c_{name}"),
                refs: refs.clone(),
            },
            None,
            None,
        );
        let q = no.next();
        let mut m_no = m.clone();
        m_no.set(a, SymValue::Pos(q));
        m_no.advance(1);
        let st_no = run_state(m_no, lib);
        no.push(NodeKind::Input, Some(st_no.clone()), None);
        let no = no.finish(Cont::Run(st_no));
        let mut m_yes = m.clone();
        m_yes.set(a, SymValue::Pos(cpos.clone()));
        m_yes.advance(1);
        let st_yes = run_state(m_yes, lib);
        ch.push(
            NodeKind::Computation {
                symbol: format!("d_{name}"),
                nonce: false,
                args: refs,
            },
            Some(st_yes.clone()),
            Some(no),
        );
        ch.finish(Cont::Run(st_yes))
    }

    fn if_test(
        &self,
        pos: &Position,
        m: &Machine<SymValue>,
        lib: u64,
        ops: &[SymValue],
        n: i64,
        op: RelOp,
    ) -> Cont {
        let mut ch = Chain::new(pos.clone());
        let refs = ops.iter().map(|v| ch.value(v, self.w)).collect();
        ch.push(
            NodeKind::Output {
                label: format!("c_{}", op.name()),
                refs,
            },
            None,
            None,
        );
        let q = ch.push(NodeKind::Input, None, None);
        let mut taken = m.clone();
        taken.advance(n);
        let mut fall = m.clone();
        fall.advance(1);
        ch.comp(
            "iszero",
            false,
            vec![q],
            Some(Cont::Run(run_state(fall, lib))),
        );
        ch.finish(Cont::Run(run_state(taken, lib)))
    }

    fn cmp_tail(
        &self,
        mut ch: Chain,
        q: &Position,
        m: &Machine<SymValue>,
        lib: u64,
        a: Reg,
        vals: &[i64],
    ) -> Cont {
        let Some((&v, rest)) = vals.split_first() else {
            return Cont::Stop("cmp answer out of range".into());
        };
        let r = ch.term(&iota_encode(&num_to_bits(v, self.w)));
        let cpos = ch.next();
        let no = self.cmp_tail(
            ch.branch(cpos.iter().copied().chain([1]).collect()),
            q,
            m,
            lib,
            a,
            rest,
        );
        let mut m2 = m.clone();
        m2.set(a, SymValue::Num(v));
        m2.advance(1);
        let st = run_state(m2, lib);
        ch.push(
            NodeKind::Computation {
                symbol: "equals".into(),
                nonce: false,
                args: vec![q.clone(), r],
            },
            Some(st.clone()),
            Some(no),
        );
        ch.finish(Cont::Run(st))
    }
}

impl LazyTree for Embedding<'_> {
    type Node = Node;

    fn root(&self) -> Result<Node, EmbedError> {
        self.materialize(&Cont::Run(run_state(self.init.clone(), 0)), vec![])
    }

    fn child(&self, n: &Node, edge: usize) -> Result<Node, EmbedError> {
        let cont = n.edges.get(edge).ok_or_else(|| EmbedError::NoEdge {
            pos: n.pos.clone(),
            edge,
        })?;
        let mut pos = n.pos.clone();
        pos.push(edge as u32);
        self.materialize(cont, pos)
    }
}

/// Replace positions by the terms computed there.
pub fn resolve_state(st: &TreeState, f: &BTreeMap<Position, Term>) -> TreeState {
    let mut g = |v: &SymValue| match v {
        SymValue::Pos(q) => f
            .get(q)
            .map_or_else(|| v.clone(), |t| SymValue::Sym(t.clone())),
        _ => v.clone(),
    };
    let phase = match &st.phase {
        Phase::Run(m) => Phase::Run(map_machine(m, &mut g)),
        Phase::Returned { value, heap } => Phase::Returned {
            value: g(value),
            heap: heap.iter().map(|(l, c)| (*l, c.map(&mut g))).collect(),
        },
        other => other.clone(),
    };
    TreeState {
        phase,
        lib_calls: st.lib_calls,
    }
}

pub fn map_machine<V: Val, W: Val>(m: &Machine<V>, f: &mut impl FnMut(&V) -> W) -> Machine<W> {
    Machine {
        frames: m
            .frames
            .iter()
            .map(|fr| Frame {
                method: fr.method.clone(),
                pp: fr.pp,
                regs: fr.regs.map(f),
            })
            .collect(),
        heap: m
            .heap
            .iter()
            .map(|(l, c): (_, &Cell<V>)| (*l, c.map(f)))
            .collect(),
    }
}

/// An adversary move at a tree node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeInput {
    Term { term: Term, recipe: SymOp },
    Control(Bitstring),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("input node needs an adversary input")]
    InputRequired,
    #[error("adversary input rejected: {0}")]
    InvalidInput(String),
    #[error("leaf reached: {0}")]
    Leaf(String),
    #[error("reference {0:?} has no value")]
    Dangling(Position),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymCursor<N> {
    pub view: View,
    pub node: N,
    pub f: BTreeMap<Position, Term>,
}

impl<N> SymCursor<N> {
    pub fn new(node: N) -> Self {
        SymCursor {
            view: View::new(),
            node,
            f: BTreeMap::new(),
        }
    }
}

fn lookup<T: Clone>(f: &BTreeMap<Position, T>, refs: &[Position]) -> Result<Vec<T>, ExecError> {
    refs.iter()
        .map(|r| {
            f.get(r)
                .cloned()
                .ok_or_else(|| ExecError::Dangling(r.clone()))
        })
        .collect()
}

/// One rule of the symbolic execution of a tree.
pub fn sym_exec_step<T: LazyTree>(
    tree: &T,
    model: &SymbolicModel,
    cur: &SymCursor<T::Node>,
    input: Option<&TreeInput>,
) -> Result<SymCursor<T::Node>, ExecError> {
    let mut next = SymCursor {
        view: cur.view.clone(),
        node: cur.node.clone(),
        f: cur.f.clone(),
    };
    let pos = cur.node.pos().clone();
    let edge = match cur.node.kind() {
        NodeKind::Computation {
            symbol,
            nonce: true,
            ..
        } => {
            next.f.insert(
                pos,
                Term::Nonce(crate::term::name(symbol), NonceKind::Protocol),
            );
            0
        }
        NodeKind::Computation { symbol, args, .. } => {
            let xs = lookup(&cur.f, args)?;
            match model.apply(symbol, &xs).ok().flatten() {
                Some(t) => {
                    next.f.insert(pos, t);
                    0
                }
                None => 1,
            }
        }
        NodeKind::Output { label, refs } => {
            let terms = lookup(&cur.f, refs)?;
            next.view.push(ViewEvent::Out {
                label: label.clone(),
                terms,
            });
            0
        }
        NodeKind::Input => {
            let Some(TreeInput::Term { term, recipe }) = input else {
                return Err(ExecError::InputRequired);
            };
            if model.eval_checked(recipe, &cur.view.out_terms()).as_ref() != Some(term) {
                return Err(ExecError::InvalidInput(
                    "recipe does not evaluate to the term".into(),
                ));
            }
            next.view.push(ViewEvent::In {
                term: term.clone(),
                recipe: recipe.clone(),
            });
            next.f.insert(pos, term.clone());
            0
        }
        NodeKind::Control { out_meta, labels } => {
            let Some(TreeInput::Control(l)) = input else {
                return Err(ExecError::InputRequired);
            };
            let Some(i) = labels.iter().position(|x| x == l) else {
                return Err(ExecError::InvalidInput(
                    "label is not among the in-metadata".into(),
                ));
            };
            next.view.push(ViewEvent::Control {
                out_meta: out_meta.clone(),
                in_meta: l.clone(),
            });
            i
        }
        NodeKind::Stop { reason } => return Err(ExecError::Leaf(reason.clone())),
    };
    next.node = tree.child(&cur.node, edge)?;
    Ok(next)
}

/// The attacker side of a computational tree execution.
pub trait TreeAttacker {
    fn output(&mut self, label: &str, payload: &[Bitstring]);
    fn input(&mut self) -> Bitstring;
    fn control(&mut self, out_meta: &Bitstring) -> Bitstring;
    /// Whether the attacker has ended the execution.
    fn done(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompCursor<N> {
    pub node: N,
    pub f: BTreeMap<Position, Bitstring>,
    /// Nonce cache.
    pub n: BTreeMap<String, Bitstring>,
    pub outs: Vec<(String, Vec<Bitstring>)>,
}

impl<N> CompCursor<N> {
    pub fn new(node: N) -> Self {
        CompCursor {
            node,
            f: BTreeMap::new(),
            n: BTreeMap::new(),
            outs: Vec::new(),
        }
    }
}

/// Where nonce values come from.
pub trait NonceSource {
    fn nonce(&mut self, name: &str, bits: usize) -> Bitstring;
}

impl NonceSource for Rng {
    fn nonce(&mut self, _name: &str, bits: usize) -> Bitstring {
        draw_nonce(self, bits)
    }
}

/// One rule of the computational execution; nonces are drawn on first use.
pub fn comp_exec_step<T: LazyTree>(
    tree: &T,
    imp: &dyn Impl,
    cur: &CompCursor<T::Node>,
    rng: &mut dyn NonceSource,
    adv: &mut dyn TreeAttacker,
) -> Result<CompCursor<T::Node>, ExecError> {
    let mut next = cur.clone();
    let pos = cur.node.pos().clone();
    let edge = match cur.node.kind() {
        NodeKind::Computation {
            symbol,
            nonce: true,
            ..
        } => {
            let b = match cur.n.get(symbol) {
                Some(b) => b.clone(),
                None => {
                    let b = rng.nonce(symbol, imp.nonce_bits(symbol));
                    next.n.insert(symbol.clone(), b.clone());
                    b
                }
            };
            next.f.insert(pos, b);
            0
        }
        NodeKind::Computation { symbol, args, .. } => {
            let xs = lookup(&cur.f, args)?;
            match imp.apply(symbol, &xs) {
                Some(b) => {
                    next.f.insert(pos, b);
                    0
                }
                None => 1,
            }
        }
        NodeKind::Output { label, refs } => {
            let xs = lookup(&cur.f, refs)?;
            adv.output(label, &xs);
            next.outs.push((label.clone(), xs));
            0
        }
        NodeKind::Input => {
            next.f.insert(pos, adv.input());
            0
        }
        NodeKind::Control { out_meta, labels } => {
            let l = adv.control(out_meta);
            labels.iter().position(|x| *x == l).unwrap_or_else(|| {
                let min = labels.iter().min();
                labels.iter().position(|x| Some(x) == min).unwrap_or(0)
            })
        }
        NodeKind::Stop { reason } => return Err(ExecError::Leaf(reason.clone())),
    };
    next.node = tree.child(&cur.node, edge)?;
    Ok(next)
}

/// Run a computational execution until a leaf or `max_nodes` nodes.
pub fn comp_exec<T: LazyTree>(
    tree: &T,
    imp: &dyn Impl,
    rng: &mut dyn NonceSource,
    adv: &mut dyn TreeAttacker,
    max_nodes: usize,
) -> Result<CompCursor<T::Node>, ExecError> {
    let mut cur = CompCursor::new(tree.root()?);
    for _ in 0..max_nodes {
        if matches!(cur.node.kind(), NodeKind::Stop { .. }) || adv.done() {
            break;
        }
        cur = comp_exec_step(tree, imp, &cur, rng, adv)?;
    }
    Ok(cur)
}

/// A concrete attacker driving a tree: malicious calls go to `inner`,
/// operator queries are answered with their concrete result.
pub struct ConcreteTreeAttacker<'a> {
    pub inner: &'a dyn Attacker,
    pub w: u32,
    void: Bitstring,
    pub state: AdvState,
    answer: Option<Bitstring>,
    /// The attacker's final token, once given.
    pub verdict: Option<String>,
}

impl<'a> ConcreteTreeAttacker<'a> {
    pub fn new(inner: &'a dyn Attacker, imp: &dyn Impl, w: u32) -> Self {
        ConcreteTreeAttacker {
            inner,
            w,
            void: imp.apply("void", &[]).unwrap_or_default(),
            state: inner.initial(),
            answer: None,
            verdict: None,
        }
    }

    fn respond(&mut self, input: AdvInput) -> Option<Value> {
        let b = self.inner.respond(&self.state, &input).into_iter().next()?;
        self.state = b.state;
        match b.response {
            AdvResponse::Value(v) => Some(v),
            AdvResponse::Advr(t) => {
                self.verdict = Some(t);
                None
            }
        }
    }
}

impl TreeAttacker for ConcreteTreeAttacker<'_> {
    fn output(&mut self, label: &str, payload: &[Bitstring]) {
        let w = self.w;
        let word = |b: &Bitstring| {
            if b.len() == w as usize {
                bits_to_num(b, w)
            } else {
                None
            }
        };
        let nums: Option<Vec<i64>> = payload.iter().map(word).collect();
        let bits = |n: i64| num_to_bits(n, w);
        self.answer = if label == FINAL_CALL {
            self.respond(AdvInput::Final);
            None
        } else if let Some(mid) = label.strip_prefix("mal_") {
            let args = payload
                .iter()
                .map(|b| word(b).map_or(Value::Void, Value::Num))
                .collect();
            self.respond(AdvInput::Call {
                mid: mid.to_string(),
                args,
            })
            .map(|v| match v {
                Value::Num(n) => bits(n),
                Value::Void => self.void.clone(),
                Value::Loc(_) => Bitstring::new(),
            })
        } else if label == "c_cmp" {
            nums.map(|x| bits(x[0].cmp(&x[1]) as i64))
        } else if let Some(op) = label.strip_prefix("c_") {
            if let Ok(u) = op.parse::<UnOp>() {
                nums.map(|x| bits(u.eval(x[0], w)))
            } else if let Ok(b) = op.parse::<BinOp>() {
                nums.and_then(|x| b.eval(x[0], x[1], w)).map(bits)
            } else {
                // Non-numeric operands compare by equality only, as in the concrete machine.
                let holds = match (op.parse::<RelOp>().ok(), &nums) {
                    (Some(r), Some(x)) => Some(r.holds(x[0], x[1])),
                    (Some(RelOp::Eq), None) => Some(payload[0] == payload[1]),
                    (Some(RelOp::Ne), None) => Some(payload[0] != payload[1]),
                    _ => None,
                };
                holds.map(|t| bits(if t { 0 } else { 1 }))
            }
        } else {
            None
        };
    }

    fn input(&mut self) -> Bitstring {
        self.answer.take().unwrap_or_default()
    }

    fn control(&mut self, _out_meta: &Bitstring) -> Bitstring {
        Bitstring::new()
    }

    fn done(&self) -> bool {
        self.verdict.is_some()
    }
}

/// Output events of a computational run seen through the split-state
/// interface: malicious calls and the final call, without operator queries.
pub fn out_projection(outs: &[(String, Vec<Bitstring>)]) -> Vec<(String, Vec<Bitstring>)> {
    outs.iter()
        .filter_map(|(l, xs)| {
            if l == FINAL_CALL {
                Some((l.clone(), vec![]))
            } else {
                l.strip_prefix("mal_").map(|m| (m.to_string(), xs.clone()))
            }
        })
        .collect()
}

/// Out labels of one composed split-state run with the toy library, payloads
/// as bitstrings. Library nonces come from `nonces`; other probabilistic
/// choices must be trivial.
pub fn split_out_projection(
    p: &Program,
    w: u32,
    regs: &BTreeMap<Reg, i64>,
    attacker: &dyn Attacker,
    imp: &ToyImpl,
    nonces: &mut dyn NonceSource,
    max_moves: usize,
) -> Result<Vec<(String, Vec<Bitstring>)>, String> {
    let lib = ToyLibrary {
        spec: LibSpec::from_program(p).map_err(|e| e.to_string())?,
        imp: imp.clone(),
        flip: None,
    };
    let t = compose3(HonestPts::new(p, w, regs), AttackerPts { a: attacker }, lib)
        .map_err(|e| e.to_string())?;
    let bits_of = |v: &Value, heap: &Heap<Value>| -> Bitstring {
        match v {
            Value::Void => imp.apply("void", &[]),
            Value::Loc(l) if matches!(heap.get(l), Some(Cell::Object { .. })) => {
                imp.apply("loc", &[num_to_bits(*l as i64, LOC_BITS as u32)])
            }
            _ => value_bits(v, heap, w),
        }
        .unwrap_or_default()
    };
    let mut s = t.initial();
    let mut outs = Vec::new();
    for _ in 0..max_moves {
        s = match t.classify(&s) {
            Classify::Prob(bs) if bs.len() == 1 => {
                bs.into_iter().next().map(|(_, x, _)| x).expect("one")
            }
            Classify::Prob(_) => return Err("probabilistic choice outside the library".into()),
            Classify::Uniform { bits, pick } => pick(nonces.nonce("", bits as usize).to_u64()).0,
            Classify::Nondet(ls) => {
                let Some((label, x, _)) = ls.into_iter().next() else {
                    return Ok(outs);
                };
                match &label {
                    SsLabel::Out { fname, payload } => {
                        let heap = match &s.h {
                            HState::Run(m) => m.heap.clone(),
                            _ => Heap::new(),
                        };
                        let xs = if fname == FINAL_CALL {
                            vec![]
                        } else {
                            payload.iter().map(|v| bits_of(v, &heap)).collect()
                        };
                        outs.push((fname.clone(), xs));
                    }
                    SsLabel::Final { .. } => return Ok(outs),
                    _ => {}
                }
                x
            }
            Classify::Waiting => return Err("deadlock".into()),
            Classify::Stuck(r) => return Err(r),
        };
    }
    Err("move budget exhausted".into())
}

/// Trace segments without global transitions: each ends with an out or
/// library-call label, and every later one starts with the in or
/// library-return label that resumed the honest program.
pub fn quasi_atomic_split<L: Clone>(
    trace: &[L],
    kind: impl Fn(&L) -> Option<LabelKind>,
) -> Vec<Vec<L>> {
    let mut out: Vec<Vec<L>> = Vec::new();
    let mut cur: Vec<L> = Vec::new();
    for l in trace {
        match kind(l) {
            Some(LabelKind::In | LabelKind::Lr) => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                cur.push(l.clone());
            }
            Some(LabelKind::Out | LabelKind::Lc | LabelKind::Final) => {
                cur.push(l.clone());
                out.push(std::mem::take(&mut cur));
            }
            None => cur.push(l.clone()),
        }
    }
    if !cur.is_empty() || out.is_empty() {
        out.push(cur);
    }
    out
}

/// Global labels of one symbolic step, in order.
pub fn step_labels(st: &SymStep) -> Vec<Option<LabelKind>> {
    match st.rule.as_str() {
        "In" | "In-branch" | "In-cmp" => vec![Some(LabelKind::In)],
        "rIDR-s" | "Binop-l" | "Unop-l" => vec![Some(LabelKind::Lc), Some(LabelKind::Lr)],
        _ if !st.events.is_empty() => vec![Some(LabelKind::Out)],
        _ => vec![None],
    }
}

/// States at which the symbolic machine resumes after a global transition.
pub fn resumption_states(trace: &[SymStep]) -> Vec<TreeState> {
    let labelled: Vec<(usize, Option<LabelKind>)> = trace
        .iter()
        .enumerate()
        .flat_map(|(i, s)| step_labels(s).into_iter().map(move |k| (i, k)))
        .collect();
    quasi_atomic_split(&labelled, |(_, k)| *k)
        .into_iter()
        .skip(1)
        .filter_map(|seg| seg.first().map(|(i, _)| *i))
        .map(|i| TreeState {
            phase: trace[i].next.phase.clone(),
            lib_calls: trace[i].next.lib_calls,
        })
        .collect()
}

/// Adversary term for a symbolic-VM choice after an output with `label`.
pub fn choice_input(choice: &Choice, label: &str, w: u32) -> TreeInput {
    match choice {
        Choice::Term { term, recipe } => TreeInput::Term {
            term: term.clone(),
            recipe: recipe.clone(),
        },
        Choice::Index(i) => {
            let t = if label == "c_cmp" {
                iota_encode(&num_to_bits(*i as i64 - 1, w))
            } else {
                branch_term(*i == 0, w)
            };
            TreeInput::Term {
                recipe: SymOp::from_term(&t),
                term: t,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Correspondence {
    /// Nodes visited on the tree path.
    pub nodes: usize,
    /// Resumption states compared.
    pub compared: usize,
}

/// Walk the tree under a choice script and compare every resumed state,
/// after replacing positions by terms, with the symbolic machine's
/// resumption states under the same script.
pub fn check_correspondence(
    emb: &Embedding<'_>,
    vm: &SymVm<'_>,
    script: &[Choice],
    max_nodes: usize,
) -> Result<Correspondence, String> {
    let (_, trace) = vm.replay(script).map_err(|e| e.to_string())?;
    let expected = resumption_states(&trace);
    let mut cur = SymCursor::new(emb.root().map_err(|e| e.to_string())?);
    let mut got = Vec::new();
    let mut k = 0;
    let mut last_label = String::new();
    let mut nodes = 1;
    while nodes < max_nodes {
        let input = match &cur.node.kind {
            NodeKind::Stop { .. } => break,
            NodeKind::Input => match script.get(k) {
                Some(c) => {
                    k += 1;
                    Some(choice_input(c, &last_label, emb.w))
                }
                None => break,
            },
            NodeKind::Output { label, .. } => {
                last_label = label.clone();
                None
            }
            _ => None,
        };
        let stored = cur.node.payload.clone();
        cur = sym_exec_step(emb, &emb.model, &cur, input.as_ref()).map_err(|e| e.to_string())?;
        nodes += 1;
        if let Some(st) = &cur.node.entered {
            if let Some(p) = &stored {
                if p != st {
                    return Err(format!(
                        "node payload differs from the resumed state at {:?}",
                        cur.node.pos
                    ));
                }
            }
            got.push(resolve_state(st, &cur.f));
        }
    }
    for (i, g) in got.iter().enumerate() {
        match expected.get(i) {
            Some(e) if e == g => {}
            Some(e) => return Err(format!("resumption {i} differs:\n tree {g:?}\n vm   {e:?}")),
            None => {
                return Err(format!(
                    "tree resumes more often than the symbolic machine ({i})"
                ))
            }
        }
    }
    Ok(Correspondence {
        nodes,
        compared: got.len(),
    })
}

/// A tree over a probabilistic transition system: internal deterministic
/// steps are skipped and nondeterministic choices become control nodes.
pub struct PtsTree<'a, P: Pts> {
    pub pts: &'a P,
    pub meta_bits: usize,
}

#[derive(Debug, Clone)]
pub struct PtsNode<S> {
    pub pos: Position,
    pub kind: NodeKind,
    pub succ: Vec<S>,
}

impl<S: Clone + Debug> TreeNode for PtsNode<S> {
    fn pos(&self) -> &Position {
        &self.pos
    }
    fn kind(&self) -> &NodeKind {
        &self.kind
    }
}

impl<P: Pts> PtsTree<'_, P> {
    fn node_at(&self, s: P::S, pos: Position) -> Result<PtsNode<P::S>, EmbedError> {
        let mut s = s;
        for _ in 0..10_000 {
            let next = match self.pts.classify(&s) {
                Classify::Prob(v) if v.len() == 1 => v.into_iter().next().map(|(_, t, _)| t),
                Classify::Prob(_) | Classify::Uniform { .. } => {
                    return Err(EmbedError::Nondeterministic(format!("{s:?}")));
                }
                Classify::Nondet(opts) => {
                    let labels = (0..opts.len() as u64)
                        .map(|i| Bitstring::from_u64(i, self.meta_bits))
                        .collect();
                    return Ok(PtsNode {
                        pos,
                        kind: NodeKind::Control {
                            out_meta: Bitstring::from_u64(opts.len() as u64, self.meta_bits),
                            labels,
                        },
                        succ: opts.into_iter().map(|(_, t, _)| t).collect(),
                    });
                }
                Classify::Waiting => None,
                Classify::Stuck(r) => {
                    return Ok(PtsNode {
                        pos,
                        kind: NodeKind::Stop { reason: r },
                        succ: vec![],
                    })
                }
            };
            match next {
                Some(t) => s = t,
                None => {
                    return Ok(PtsNode {
                        pos,
                        kind: NodeKind::Stop {
                            reason: "waiting".into(),
                        },
                        succ: vec![],
                    })
                }
            }
        }
        Ok(PtsNode {
            pos,
            kind: NodeKind::Stop {
                reason: "step budget exhausted".into(),
            },
            succ: vec![],
        })
    }
}

impl<P: Pts> LazyTree for PtsTree<'_, P> {
    type Node = PtsNode<P::S>;

    fn root(&self) -> Result<Self::Node, EmbedError> {
        self.node_at(self.pts.initial(), vec![])
    }

    fn child(&self, n: &Self::Node, edge: usize) -> Result<Self::Node, EmbedError> {
        let s = n
            .succ
            .get(edge)
            .cloned()
            .ok_or_else(|| EmbedError::NoEdge {
                pos: n.pos.clone(),
                edge,
            })?;
        let mut pos = n.pos.clone();
        pos.push(edge as u32);
        self.node_at(s, pos)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportedNode {
    pub node: Node,
    /// Child positions per edge; `None` marks a cut.
    pub children: Vec<Option<Position>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeExport {
    pub nodes: Vec<ExportedNode>,
    pub truncated: bool,
}

/// Breadth-first dump of at most `max_nodes` nodes.
pub fn export_tree(emb: &Embedding<'_>, max_nodes: usize) -> Result<TreeExport, EmbedError> {
    let max_nodes = max_nodes.max(1);
    let mut queue = VecDeque::from([emb.root()?]);
    let mut nodes: Vec<ExportedNode> = Vec::new();
    let mut seen = 1;
    while let Some(n) = queue.pop_front() {
        let mut children = Vec::new();
        for e in 0..n.kind.arity() {
            if seen < max_nodes {
                let c = emb.child(&n, e)?;
                children.push(Some(c.pos.clone()));
                queue.push_back(c);
                seen += 1;
            } else {
                children.push(None);
            }
        }
        nodes.push(ExportedNode { node: n, children });
    }
    let truncated = nodes.iter().any(|n| n.children.iter().any(Option::is_none));
    Ok(TreeExport { nodes, truncated })
}

pub fn import_tree(json: &str) -> Result<TreeExport, serde_json::Error> {
    serde_json::from_str(json)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::parse;
    use crate::concrete::seeded;
    use crate::crypto::ToyImpl;
    use crate::term::iota_decode;
    use num_rational::BigRational;
    use num_traits::One;
    use std::collections::BTreeSet;

    const W: u32 = 4;

    fn emb(p: &Program) -> Embedding<'_> {
        Embedding::new(p, W, &BTreeMap::new()).unwrap()
    }

    fn first_path(e: &Embedding<'_>, n: usize) -> Vec<Node> {
        let mut out = vec![e.root().unwrap()];
        while out.len() < n && out.last().unwrap().kind.arity() > 0 {
            let c = e.child(out.last().unwrap(), 0).unwrap();
            out.push(c);
        }
        out
    }

    #[test]
    fn final_hand_off_is_output_then_input() {
        let p = parse(".method static main {\n const v0, 7\n return v0\n}\n").unwrap();
        let e = emb(&p);
        let path = first_path(&e, 10);
        let kinds: Vec<&NodeKind> = path.iter().map(|n| &n.kind).collect();
        assert_eq!(
            kinds,
            vec![
                &NodeKind::Computation {
                    symbol: "finalCall".into(),
                    nonce: false,
                    args: vec![]
                },
                &NodeKind::Output {
                    label: "finalCall".into(),
                    refs: vec![vec![]]
                },
                &NodeKind::Input,
                &NodeKind::Stop {
                    reason: "final".into()
                },
            ]
        );
        assert_eq!(path[2].pos, vec![0, 0]);
    }

    const LEAK: &str = ".mal static leak/1\n.method static main {\n const v0, 5\n \
        invoke-static v0, v0, v0, v0, v0, 1, leak\n return-void\n}\n";

    fn sym_walk(e: &Embedding<'_>, inputs: &[TreeInput], max: usize) -> SymCursor<Node> {
        let mut cur = SymCursor::new(e.root().unwrap());
        let mut k = 0;
        for _ in 0..max {
            let input = match &cur.node.kind {
                NodeKind::Stop { .. } => break,
                NodeKind::Input => match inputs.get(k) {
                    Some(i) => {
                        k += 1;
                        Some(i)
                    }
                    None => break,
                },
                _ => None,
            };
            cur = sym_exec_step(e, &e.model, &cur, input).unwrap();
        }
        cur
    }

    fn emp() -> TreeInput {
        TreeInput::Term {
            term: Term::constant("emp"),
            recipe: SymOp::constant("emp"),
        }
    }

    #[test]
    fn concrete_leak_is_preceded_by_its_representation() {
        let p = parse(LEAK).unwrap();
        let e = emb(&p);
        let path = first_path(&e, 20);
        let out = path
            .iter()
            .position(|n| matches!(n.kind, NodeKind::Output { .. }))
            .unwrap();
        // ι(5) at w = 4 is four string nodes over emp.
        assert_eq!(out, 5);
        let symbols: Vec<String> = path[..out]
            .iter()
            .map(|n| match &n.kind {
                NodeKind::Computation { symbol, .. } => symbol.clone(),
                k => panic!("{k:?}"),
            })
            .collect();
        assert_eq!(
            symbols,
            ["emp", "string_1", "string_0", "string_1", "string_0"]
        );
        let cur = sym_walk(&e, &[], out + 1);
        assert_eq!(
            cur.view.events[0],
            ViewEvent::Out {
                label: "mal_leak".into(),
                terms: vec![iota_encode(&num_to_bits(5, W))]
            }
        );
    }

    const ECHO: &str = ".mal static ask/1\n.mal static leak/1\n.method static main {\n \
        invoke-static v0, v0, v0, v0, v0, 1, ask\n move-result v1\n \
        invoke-static v1, v1, v1, v1, v1, 1, leak\n return-void\n}\n";

    #[test]
    fn leaked_position_is_referenced_directly() {
        let p = parse(ECHO).unwrap();
        let e = emb(&p);
        let path = first_path(&e, 30);
        let inputs: Vec<&Node> = path.iter().filter(|n| n.kind == NodeKind::Input).collect();
        let q = inputs[0].pos.clone();
        let leak = path
            .iter()
            .find(|n| matches!(&n.kind, NodeKind::Output { label, .. } if label == "mal_leak"))
            .unwrap();
        let NodeKind::Output { refs, .. } = &leak.kind else {
            unreachable!()
        };
        assert_eq!(refs, &vec![q.clone()]);
        assert_eq!(leak.pos.len(), q.len() + 1);
        let payload = inputs[0].payload.as_ref().unwrap();
        let Phase::Run(m) = &payload.phase else {
            panic!()
        };
        m.current(&p).unwrap();
        assert_eq!(m.top().pp, 1);
        let cur = sym_walk(&e, &[emp()], 40);
        assert!(cur.view.events.contains(&ViewEvent::Out {
            label: "mal_leak".into(),
            terms: vec![Term::constant("emp")]
        }));
    }

    const XOR: &str = ".method static main {\n binop v2, v0, v1, xor\n return v2\n}\n";

    fn comp_pos(path: &[Node], sym: &str) -> usize {
        path.iter()
            .position(|n| matches!(&n.kind, NodeKind::Computation { symbol, .. } if symbol == sym))
            .unwrap()
    }

    #[test]
    fn lifted_operator_takes_yes_or_no_edge() {
        let p = parse(XOR).unwrap();
        let regs = |a: Term| {
            BTreeMap::from([
                (0, SymValue::Sym(a)),
                (1, SymValue::Sym(iota_encode(&num_to_bits(3, W)))),
            ])
        };
        let e = Embedding::new(&p, W, &regs(iota_encode(&num_to_bits(5, W)))).unwrap();
        let path = first_path(&e, 40);
        let i = comp_pos(&path, "d_xor");
        let cur = sym_walk(&e, &[], i + 1);
        assert_eq!(cur.node.pos, [path[i].pos.clone(), vec![0]].concat());
        let r = cur.f[&path[i].pos].clone();
        assert_eq!(iota_decode(&r), Some(num_to_bits(6, W)));

        let e = Embedding::new(&p, W, &regs(Term::protocol_nonce("k"))).unwrap();
        let path = first_path(&e, 40);
        let i = comp_pos(&path, "d_xor");
        let cur = sym_walk(&e, &[], i + 1);
        assert_eq!(cur.node.pos, [path[i].pos.clone(), vec![1]].concat());
        assert!(!cur.f.contains_key(&path[i].pos));
        assert_eq!(
            cur.node.kind,
            NodeKind::Output {
                label: "c_xor".into(),
                refs: vec![path[0].pos.clone(), path[i - 1].pos.clone()]
            }
        );
    }

    #[test]
    fn references_are_legal_along_explored_paths() {
        let p = parse(LIB).unwrap();
        let e = Embedding::new(&p, W, &BTreeMap::from([(0, SymValue::Num(2))])).unwrap();
        let ex = export_tree(&e, 300).unwrap();
        for n in &ex.nodes {
            check_refs(&n.node.pos, &n.node.kind).unwrap();
        }
        assert!(legal_reference(&[0, 0, 1], &[0]));
        assert!(!legal_reference(&[1, 1], &[1]));
        assert!(!legal_reference(&[0], &[0]));
        assert!(!legal_reference(&[0, 1], &[1]));
    }

    /// A tree given node by node.
    struct FixedTree(BTreeMap<Position, NodeKind>);

    #[derive(Debug, Clone, PartialEq)]
    struct FixedNode(Position, NodeKind);

    impl TreeNode for FixedNode {
        fn pos(&self) -> &Position {
            &self.0
        }
        fn kind(&self) -> &NodeKind {
            &self.1
        }
    }

    impl LazyTree for FixedTree {
        type Node = FixedNode;
        fn root(&self) -> Result<FixedNode, EmbedError> {
            self.child(&FixedNode(vec![], NodeKind::Input), usize::MAX)
        }
        fn child(&self, n: &FixedNode, edge: usize) -> Result<FixedNode, EmbedError> {
            let mut pos = n.0.clone();
            if edge != usize::MAX {
                pos.push(edge as u32);
            }
            let kind = self.0.get(&pos).cloned().unwrap_or(NodeKind::Stop {
                reason: "end".into(),
            });
            Ok(FixedNode(pos, kind))
        }
    }

    fn comp(symbol: &str, nonce: bool, args: Vec<Position>) -> NodeKind {
        NodeKind::Computation {
            symbol: symbol.into(),
            nonce,
            args,
        }
    }

    struct Recorder {
        outs: Vec<(String, Vec<Bitstring>)>,
        reply: Bitstring,
    }

    impl TreeAttacker for Recorder {
        fn output(&mut self, label: &str, payload: &[Bitstring]) {
            self.outs.push((label.into(), payload.to_vec()));
        }
        fn input(&mut self) -> Bitstring {
            Bitstring::new()
        }
        fn control(&mut self, _out_meta: &Bitstring) -> Bitstring {
            self.reply.clone()
        }
    }

    #[test]
    fn nonces_are_drawn_once_and_cached() {
        let t = FixedTree(BTreeMap::from([
            (vec![], comp("k", true, vec![])),
            (vec![0], comp("k", true, vec![])),
            (vec![0, 0], comp("equals", false, vec![vec![], vec![0]])),
            (vec![0, 0, 0], comp("k2", true, vec![])),
        ]));
        let imp = ToyImpl { w: W };
        let mut rng = seeded(7);
        let mut adv = Recorder {
            outs: vec![],
            reply: Bitstring::new(),
        };
        let mut cur = CompCursor::new(t.root().unwrap());
        let mut sizes = vec![];
        while !matches!(cur.node.1, NodeKind::Stop { .. }) {
            cur = comp_exec_step(&t, &imp, &cur, &mut rng, &mut adv).unwrap();
            sizes.push(cur.n.len());
        }
        assert_eq!(cur.f[&vec![]], cur.f[&vec![0]]);
        assert_eq!(cur.node.0, vec![0, 0, 0, 0]);
        assert_eq!(sizes, [1, 1, 1, 2]);
        assert_ne!(cur.n["k"], cur.n["k2"]);
    }

    #[test]
    fn destructor_failure_takes_the_no_edge() {
        let t = FixedTree(BTreeMap::from([
            (vec![], comp("emp", false, vec![])),
            (vec![0], comp("fst", false, vec![vec![]])),
            (
                vec![0, 1],
                NodeKind::Output {
                    label: "x".into(),
                    refs: vec![vec![]],
                },
            ),
        ]));
        let model = SymbolicModel::core(W);
        let mut cur = SymCursor::new(t.root().unwrap());
        for _ in 0..3 {
            cur = sym_exec_step(&t, &model, &cur, None).unwrap();
        }
        assert_eq!(cur.node.0, vec![0, 1, 0]);
        assert_eq!(cur.f.len(), 1);
        assert_eq!(cur.view.events.len(), 1);

        let imp = ToyImpl { w: W };
        let mut adv = Recorder {
            outs: vec![],
            reply: Bitstring::new(),
        };
        let mut cur = CompCursor::new(t.root().unwrap());
        for _ in 0..3 {
            cur = comp_exec_step(&t, &imp, &cur, &mut seeded(1), &mut adv).unwrap();
        }
        assert_eq!(cur.node.0, vec![0, 1, 0]);
        assert_eq!(adv.outs.len(), 1);
    }

    #[test]
    fn control_nodes_check_and_default_labels() {
        let labels = vec![Bitstring::from_u64(2, 2), Bitstring::from_u64(1, 2)];
        let t = FixedTree(BTreeMap::from([(
            vec![],
            NodeKind::Control {
                out_meta: Bitstring::from_u64(3, 2),
                labels: labels.clone(),
            },
        )]));
        let model = SymbolicModel::core(W);
        let root = SymCursor::new(t.root().unwrap());
        let ok = sym_exec_step(
            &t,
            &model,
            &root,
            Some(&TreeInput::Control(labels[1].clone())),
        )
        .unwrap();
        assert_eq!(ok.node.0, vec![1]);
        assert_eq!(
            ok.view.events,
            vec![ViewEvent::Control {
                out_meta: Bitstring::from_u64(3, 2),
                in_meta: labels[1].clone()
            }]
        );
        let bad = sym_exec_step(
            &t,
            &model,
            &root,
            Some(&TreeInput::Control(Bitstring::from_u64(0, 2))),
        );
        assert!(matches!(bad, Err(ExecError::InvalidInput(_))));

        let imp = ToyImpl { w: W };
        let mut adv = Recorder {
            outs: vec![],
            reply: Bitstring::from_u64(3, 2),
        };
        let cur = comp_exec_step(
            &t,
            &imp,
            &CompCursor::new(t.root().unwrap()),
            &mut seeded(1),
            &mut adv,
        )
        .unwrap();
        assert_eq!(cur.node.0, vec![1]);
        adv.reply = labels[0].clone();
        let cur = comp_exec_step(
            &t,
            &imp,
            &CompCursor::new(t.root().unwrap()),
            &mut seeded(1),
            &mut adv,
        )
        .unwrap();
        assert_eq!(cur.node.0, vec![0]);
    }

    #[test]
    fn input_recipes_are_checked() {
        let p = parse(ECHO).unwrap();
        let e = emb(&p);
        let path = first_path(&e, 30);
        let at = path.iter().position(|n| n.kind == NodeKind::Input).unwrap();
        let cur = sym_walk(&e, &[], at);
        let wrong = TreeInput::Term {
            term: Term::constant("void"),
            recipe: SymOp::constant("emp"),
        };
        assert!(matches!(
            sym_exec_step(&e, &e.model, &cur, Some(&wrong)),
            Err(ExecError::InvalidInput(_))
        ));
        assert!(matches!(
            sym_exec_step(&e, &e.model, &cur, None),
            Err(ExecError::InputRequired)
        ));
    }

    /// 0 -(internal)-> 1 -(three labelled moves)-> 10 | 11 | 12; 11 flips a coin.
    struct Synthetic;

    impl Pts for Synthetic {
        type S = u32;
        fn initial(&self) -> u32 {
            0
        }
        fn classify(&self, s: &u32) -> Classify<'_, u32> {
            let half = || BigRational::new(1.into(), 2.into());
            match s {
                0 => Classify::Prob(vec![(BigRational::one(), 1, 1)]),
                1 => Classify::Nondet(
                    (10..13)
                        .map(|t| {
                            (
                                SsLabel::In {
                                    payload: crate::machine::Value::Void,
                                },
                                t,
                                1,
                            )
                        })
                        .collect(),
                ),
                10 => Classify::Stuck("ten".into()),
                11 => Classify::Prob(vec![(half(), 10, 1), (half(), 12, 1)]),
                _ => Classify::Waiting,
            }
        }
        fn receive(&self, _s: &u32, _l: &SsLabel) -> Option<(u32, u64)> {
            None
        }
        fn alphabet(&self) -> BTreeSet<LabelKind> {
            BTreeSet::new()
        }
    }

    #[test]
    fn nondeterminism_becomes_control_nodes() {
        let t = PtsTree {
            pts: &Synthetic,
            meta_bits: 8,
        };
        let root = t.root().unwrap();
        let NodeKind::Control { out_meta, labels } = &root.kind else {
            panic!("{root:?}")
        };
        assert_eq!(out_meta.to_u64(), 3);
        assert_eq!(labels.len(), 3);
        assert!(labels.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(
            t.child(&root, 0).unwrap().kind,
            NodeKind::Stop {
                reason: "ten".into()
            }
        );
        assert!(matches!(t.child(&root, 1), Err(EmbedError::Nondeterministic(s)) if s == "11"));
        assert!(matches!(
            t.child(&root, 2).unwrap().kind,
            NodeKind::Stop { .. }
        ));
        assert!(t.child(&root, 3).is_err());
        let model = SymbolicModel::core(W);
        let cur = sym_exec_step(
            &t,
            &model,
            &SymCursor::new(root.clone()),
            Some(&TreeInput::Control(labels[2].clone())),
        )
        .unwrap();
        assert_eq!(cur.node.pos, vec![2]);
    }

    #[test]
    fn quasi_atomic_segments() {
        use LabelKind::*;
        let k = |l: &Option<LabelKind>| *l;
        let none: Vec<Option<LabelKind>> = vec![None, None, None];
        assert_eq!(quasi_atomic_split(&none, k), vec![none.clone()]);
        let empty: Vec<Option<LabelKind>> = vec![];
        assert_eq!(quasi_atomic_split(&empty, k), vec![empty.clone()]);
        let t = vec![None, Some(Lc), Some(Lr), None, Some(Lc), Some(Lr)];
        let segs = quasi_atomic_split(&t, k);
        assert_eq!(
            segs,
            vec![
                vec![None, Some(Lc)],
                vec![Some(Lr), None, Some(Lc)],
                vec![Some(Lr)],
            ]
        );
        assert_eq!(segs.concat(), t);
        let t = vec![Some(Out), Some(In), None, Some(Out), Some(In), Some(Final)];
        let segs = quasi_atomic_split(&t, k);
        assert_eq!(segs.len(), 3);
        assert_eq!(segs.concat(), t);
        for s in &segs[1..] {
            assert!(matches!(s[0], Some(In | Lr)));
        }
    }

    #[test]
    fn export_respects_the_node_limit_and_round_trips() {
        let p = parse(ECHO).unwrap();
        let e = emb(&p);
        let one = export_tree(&e, 1).unwrap();
        assert_eq!(one.nodes.len(), 1);
        assert!(one.truncated);
        assert_eq!(one.nodes[0].node.pos, Vec::<u32>::new());
        for max in [2, 5, 17, 64] {
            let ex = export_tree(&e, max).unwrap();
            assert!(ex.nodes.len() <= max);
            let back = import_tree(&serde_json::to_string(&ex).unwrap()).unwrap();
            assert_eq!(back, ex);
            for n in &back.nodes {
                for (i, c) in n.children.iter().enumerate() {
                    let Some(c) = c else { continue };
                    let again = e.child(&n.node, i).unwrap();
                    assert_eq!(&again.pos, c);
                    let orig = ex.nodes.iter().find(|m| &m.node.pos == c).unwrap();
                    assert_eq!(again, orig.node);
                }
            }
        }
        let all = export_tree(&e, 10_000).unwrap();
        assert!(!all.truncated);
    }

    const LIB: &str = ".model symenc\n.class Cipher\n.field Cipher.mode\n\
        .mal static leak/1\n\
        .symop keygen = n!k\n.symop encrypt = enc(x_1,x_2)\n\
        .libspec Cipher.keygen => keygen\n.libspec Cipher.doFinal when mode=1 => encrypt\n\
        .method static main {\n new-instance v1, Cipher\n \
        invoke-direct v1, v1, v1, v1, v1, 1, keygen\n move-result v2\n \
        const v4, 1\n iput v4, v1, Cipher.mode\n \
        invoke-direct v1, v2, v0, v1, v1, 3, doFinal\n move-result v5\n \
        invoke-static v5, v5, v5, v5, v5, 1, leak\n move-result v6\n \
        if-testz v6, 2, eq\n invoke-static v2, v2, v2, v2, v2, 1, leak\n \
        cmp v7, v6, v0\n return v7\n}\n\
        .method Cipher.keygen {\n rand v1\n return v1\n}\n\
        .method Cipher.doFinal {\n return-void\n}\n";

    #[test]
    fn library_calls_become_operation_chains() {
        let p = parse(LIB).unwrap();
        let e = Embedding::new(&p, W, &BTreeMap::from([(0, SymValue::Num(2))])).unwrap();
        let path = first_path(&e, 40);
        let k = comp_pos(&path, "k.0");
        let enc = comp_pos(&path, "enc");
        assert!(path[k].payload.is_some());
        assert!(path[enc].payload.is_some());
        let NodeKind::Computation { args, .. } = &path[enc].kind else {
            unreachable!()
        };
        assert_eq!(args[0], path[k].pos);
        let cur = sym_walk(&e, &[], enc + 2);
        let expect = format!("enc(n!k.0,{})", iota_encode(&num_to_bits(2, W)));
        assert_eq!(cur.view.events[0].kind(), "out");
        let ViewEvent::Out { terms, .. } = &cur.view.events[0] else {
            unreachable!()
        };
        assert_eq!(terms[0], expect.parse::<Term>().unwrap());
    }

    fn scripts(vm: &SymVm<'_>, depth: usize) -> Vec<Vec<Choice>> {
        let mut out = vec![];
        let mut stack = vec![vec![]];
        while let Some(s) = stack.pop() {
            let (st, _) = vm.replay(&s).unwrap();
            let cs = if st.is_terminal() || s.len() >= depth {
                vec![]
            } else {
                vm.choices(&st).unwrap()
            };
            for c in cs.iter().take(4) {
                let mut t = s.clone();
                t.push(c.clone());
                stack.push(t);
            }
            if cs.is_empty() {
                out.push(s);
            }
        }
        out
    }

    #[test]
    fn tree_states_correspond_to_symbolic_states() {
        for (src, regs) in [
            (LIB, vec![(0, SymValue::Num(2))]),
            (SEAL, vec![(0, SymValue::Num(2))]),
            (ECHO, vec![(0, SymValue::Sym(Term::protocol_nonce("s")))]),
            (LEAK, vec![]),
            (
                XOR,
                vec![
                    (0, SymValue::Sym(Term::protocol_nonce("s"))),
                    (1, SymValue::Num(1)),
                ],
            ),
        ] {
            let p = parse(src).unwrap();
            let regs: BTreeMap<Reg, SymValue> = regs.into_iter().collect();
            let e = Embedding::new(&p, W, &regs).unwrap();
            let vm = SymVm::new(&p, W, &regs, 1).unwrap();
            let ss = scripts(&vm, 4);
            assert!(!ss.is_empty());
            let mut compared = 0;
            for s in &ss {
                let c = check_correspondence(&e, &vm, s, 20)
                    .unwrap_or_else(|m| panic!("{src}\n{s:?}\n{m}"));
                compared += c.compared;
            }
            assert!(compared > 0, "{src}");
        }
    }

    #[test]
    fn node_ids_grow_linearly() {
        let src = ".mal static leak/1\n.method static main {\n const v0, 0\n \
            binop v0, v0, v1, add\n invoke-static v0, v0, v0, v0, v0, 1, leak\n goto -2\n}\n";
        let p = parse(src).unwrap();
        let e = Embedding::new(&p, W, &BTreeMap::from([(1, SymValue::Num(1))])).unwrap();
        let mut cur = SymCursor::new(e.root().unwrap());
        let mut sizes = vec![];
        for _ in 0..400 {
            if cur.node.kind == NodeKind::Input {
                cur = sym_exec_step(&e, &e.model, &cur, Some(&emp())).unwrap();
            } else {
                cur = sym_exec_step(&e, &e.model, &cur, None).unwrap();
            }
            let id = serde_json::to_string(&(&cur.node.pos, &cur.node.payload)).unwrap();
            sizes.push((cur.node.pos.len(), id.len()));
        }
        let env = |len: usize| {
            sizes
                .iter()
                .filter(|(l, _)| *l <= len)
                .map(|(_, s)| *s)
                .max()
                .unwrap()
        };
        let full = sizes.last().unwrap().0;
        assert!(full >= 400);
        // Doubling the path length at most doubles the largest id, plus slack.
        assert!(env(full) as f64 <= 2.2 * env(full / 2) as f64);
        assert!(env(full / 2) as f64 <= 2.2 * env(full / 4) as f64);
    }

    const SEAL: &str = ".model symenc\n.class Cipher\n.field Cipher.mode\n\
        .mal static leak/1\n\
        .symop keygen = n!k\n.symop seal = enc(n!r,x_1)\n\
        .libspec Cipher.keygen => keygen\n.libspec Cipher.doFinal when mode=1 => seal\n\
        .method static main {\n new-instance v1, Cipher\n \
        invoke-direct v1, v1, v1, v1, v1, 1, keygen\n move-result v2\n \
        const v4, 1\n iput v4, v1, Cipher.mode\n \
        invoke-direct v1, v0, v1, v1, v1, 2, doFinal\n move-result v5\n \
        invoke-static v5, v5, v5, v5, v5, 1, leak\n move-result v6\n \
        if-testz v6, 2, eq\n invoke-static v2, v2, v2, v2, v2, 1, leak\n \
        cmp v7, v6, v0\n return v7\n}\n\
        .method Cipher.keygen {\n rand v1\n return v1\n}\n\
        .method Cipher.doFinal {\n return-void\n}\n";

    fn both_out_projections(
        src: &str,
        regs: &[(Reg, i64)],
        script: &str,
        seed: u64,
    ) -> (Vec<(String, Vec<Bitstring>)>, Vec<(String, Vec<Bitstring>)>) {
        let p = parse(src).unwrap();
        let regs: BTreeMap<Reg, i64> = regs.iter().cloned().collect();
        let att = crate::concrete::Scripted::parse(script).unwrap();
        let imp = ToyImpl { w: W };
        let split =
            split_out_projection(&p, W, &regs, &att, &imp, &mut seeded(seed), 10_000).unwrap();
        let sregs = regs.iter().map(|(r, v)| (*r, SymValue::Num(*v))).collect();
        let e = Embedding::new(&p, W, &sregs).unwrap();
        let mut adv = ConcreteTreeAttacker::new(&att, &imp, W);
        let run = comp_exec(&e, &imp, &mut seeded(seed), &mut adv, 10_000).unwrap();
        (out_projection(&run.outs), split)
    }

    #[test]
    fn computational_outputs_match_the_split_state_run() {
        let (tree, split) =
            both_out_projections(ECHO, &[(0, 3)], "resp 9 cost 1\nfinal x cost 1\n", 1);
        assert_eq!(tree.len(), 2);
        assert_eq!(tree, split);
        let (tree, split) = both_out_projections(
            ECHO,
            &[(0, 3)],
            "resp 9 cost 1\nresp 1 cost 1\nfinal x cost 1\n",
            1,
        );
        assert_eq!(tree.len(), 3);
        assert_eq!(tree, split);
        assert_eq!(tree[1].1, vec![num_to_bits(9, W)]);
        for seed in 0..5 {
            for resp in ["0", "5"] {
                let second = if resp == "0" {
                    ""
                } else {
                    "resp void cost 1\n"
                };
                let script = format!("resp {resp} cost 1\n{second}final x cost 1\n");
                let (tree, split) = both_out_projections(SEAL, &[(0, 2)], &script, seed);
                assert_eq!(tree, split, "seed {seed} resp {resp}");
                assert_eq!(tree.len(), if resp == "0" { 2 } else { 3 });
            }
        }
    }

    #[test]
    fn honest_randomness_stops_the_tree() {
        let p = parse(".method static main {\n rand v0\n return v0\n}\n").unwrap();
        let root = emb(&p).root().unwrap();
        assert!(matches!(root.kind, NodeKind::Stop { reason } if reason.contains("Prob")));
    }
}
