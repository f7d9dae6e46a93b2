//! Symbolic ADL: registers and heap cells hold terms, library calls evaluate
//! symbolic operations, and operations on attacker-controlled terms are
//! decided by the adversary.
//!
//! Operands fall in three classes. Numbers, locations and `void` are
//! concrete (`D`). Terms in the range of ι are bitstring representations
//! (`D_b`). Everything else is opaque (`D_c`). An operation with only
//! concrete operands runs the ordinary rule; one with `D_b` operands and no
//! `D_c` operand evaluates the lifted operator `d_<op>`; any `D_c` operand
//! sends the operands to the adversary, who answers with a deducible term.

use crate::bytecode::{Instr, Program, Reg};
use crate::crypto::{program_model, LibSpec, LibSpecError};
use crate::deduction::{joint_choices, DeductionError, RecipeSignature, View, ViewEvent};
use crate::machine::{initial_machine, ConstPool, Ctx, Heap, Loc, Machine, Transition, Val};
use crate::ops::num_to_bits;
use crate::split::FINAL_CALL;
use crate::term::{iota_encode, is_iota, Bitstring, NonceKind, SymOp, SymbolicModel, Term};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Display};
use thiserror::Error;

/// Bits used for a location inside `loc(ι(..))`.
pub const LOC_BITS: usize = 16;

/// Refuse to enumerate more views than this.
pub const MAX_VIEWS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymValue {
    Num(i64),
    Loc(Loc),
    Void,
    Sym(Term),
    /// A protocol-tree position standing for the term computed there.
    Pos(Vec<u32>),
}

impl Display for SymValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymValue::Num(n) => write!(f, "{n}"),
            SymValue::Loc(l) => write!(f, "@{l}"),
            SymValue::Void => f.write_str("void"),
            SymValue::Sym(t) => write!(f, "<{t}>"),
            SymValue::Pos(p) => {
                f.write_str("#")?;
                for (i, x) in p.iter().enumerate() {
                    if i > 0 {
                        f.write_str(".")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
        }
    }
}

impl Val for SymValue {
    fn num(n: i64) -> Self {
        SymValue::Num(n)
    }
    fn as_num(&self) -> Option<i64> {
        match self {
            SymValue::Num(n) => Some(*n),
            _ => None,
        }
    }
    fn loc(l: Loc) -> Self {
        SymValue::Loc(l)
    }
    fn as_loc(&self) -> Option<Loc> {
        match self {
            SymValue::Loc(l) => Some(*l),
            _ => None,
        }
    }
    fn void() -> Self {
        SymValue::Void
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperandClass {
    D,
    Db,
    Dc,
}

pub fn operand_class(v: &SymValue) -> OperandClass {
    match v {
        SymValue::Num(_) | SymValue::Loc(_) | SymValue::Void => OperandClass::D,
        SymValue::Sym(t) if is_iota(t) => OperandClass::Db,
        SymValue::Sym(_) | SymValue::Pos(_) => OperandClass::Dc,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Concrete,
    Library,
    Adversary,
}

/// Route taken by an operation on these operands.
pub fn route(operands: &[SymValue]) -> Route {
    let cs: Vec<OperandClass> = operands.iter().map(operand_class).collect();
    if cs.contains(&OperandClass::Dc) {
        Route::Adversary
    } else if cs.contains(&OperandClass::Db) {
        Route::Library
    } else {
        Route::Concrete
    }
}

pub fn loc_term(l: Loc) -> Term {
    Term::app("loc", vec![iota_encode(&Bitstring::from_u64(l, LOC_BITS))])
}

/// The term a value stands for; positions have none.
pub fn value_term(v: &SymValue, w: u32) -> Option<Term> {
    Some(match v {
        SymValue::Num(n) => iota_encode(&num_to_bits(*n, w)),
        SymValue::Loc(l) => loc_term(*l),
        SymValue::Void => Term::constant("void"),
        SymValue::Sym(t) => t.clone(),
        SymValue::Pos(_) => return None,
    })
}

/// Adversary answer to an if-test: ι(0^w) takes the branch, ι(0..01) falls through.
pub fn branch_term(taken: bool, w: u32) -> Term {
    iota_encode(&num_to_bits(if taken { 0 } else { 1 }, w))
}

/// The recipe alphabet offered to the adversary: everything except the
/// operator constants, their tests, lifted operators and location wrappers.
pub fn choice_signature(model: &SymbolicModel) -> RecipeSignature {
    RecipeSignature::filtered(model, |s| {
        let n = &*s.name;
        !(n.starts_with("c_")
            || n.starts_with("is_")
            || n.starts_with("d_")
            || n.starts_with("mal_")
            || matches!(n, "void" | "finalCall" | "loc" | "unloc"))
    })
}

/// Protocol nonces renamed apart for the `k`-th library call.
pub fn fresh_nonces(op: &SymOp, k: u64) -> SymOp {
    op.map_nonces(&|n, kind| match kind {
        NonceKind::Protocol => crate::term::name(&format!("{n}.{k}")),
        NonceKind::Attacker => n.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dst {
    Reg(Reg),
    /// The call result registers.
    Res,
}

/// What the machine waits for after an `out` event.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pending {
    Result(Dst),
    Branch { offset: i64 },
    Cmp { a: Reg },
}

/// An adversary move: a term with its recipe, or an index for branch and compare slots.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Term { term: Term, recipe: SymOp },
    Index(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Run(Machine<SymValue>),
    Returned {
        value: SymValue,
        heap: Heap<SymValue>,
    },
    Done,
    Stuck(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SymState {
    pub phase: Phase,
    pub view: View,
    pub pending: Option<Pending>,
    pub lib_calls: u64,
}

impl SymState {
    pub fn is_terminal(&self) -> bool {
        matches!(self.phase, Phase::Done | Phase::Stuck(_))
    }

    /// Out events that expect an answer, including one still pending.
    pub fn interactions(&self) -> usize {
        self.view
            .events
            .iter()
            .filter(|e| matches!(e, ViewEvent::Out { label, .. } if label != FINAL_CALL))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymStep {
    pub rule: String,
    pub events: Vec<ViewEvent>,
    pub next: SymState,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SymError {
    #[error("the machine waits for an adversary input")]
    ChoiceRequired,
    #[error("no adversary input is expected here")]
    UnexpectedChoice,
    #[error("adversary input rejected: {0}")]
    InvalidChoice(String),
    #[error("the state is terminal")]
    Terminal,
    #[error("more than {MAX_VIEWS} views")]
    Explosion,
    #[error(transparent)]
    LibSpec(#[from] LibSpecError),
    #[error(transparent)]
    Deduction(#[from] DeductionError),
}

/// All views within the budget.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ViewSet {
    pub views: BTreeSet<View>,
    /// Paths cut by the interaction or step budget.
    pub truncated: usize,
    /// Paths ending in a stuck state.
    pub stuck: usize,
}

pub struct SymVm<'p> {
    pub p: &'p Program,
    pub w: u32,
    pub pool: ConstPool,
    pub spec: LibSpec,
    pub model: SymbolicModel,
    pub sig: RecipeSignature,
    pub depth: usize,
    /// Honest steps allowed between two adversary moves.
    pub max_steps: u64,
    init: Machine<SymValue>,
}

impl<'p> SymVm<'p> {
    pub fn new(
        p: &'p Program,
        w: u32,
        regs: &BTreeMap<Reg, SymValue>,
        depth: usize,
    ) -> Result<Self, SymError> {
        let model = program_model(p, w)?;
        let sig = choice_signature(&model);
        let (pool, init) = initial_machine(p, regs);
        Ok(SymVm {
            p,
            w,
            pool,
            spec: LibSpec::from_program(p)?,
            model,
            sig,
            depth,
            max_steps: 100_000,
            init,
        })
    }

    /// Numeric initial registers, wrapped to the width.
    pub fn with_nums(
        p: &'p Program,
        w: u32,
        regs: &BTreeMap<Reg, i64>,
        depth: usize,
    ) -> Result<Self, SymError> {
        let regs = regs
            .iter()
            .map(|(k, v)| (*k, SymValue::Num(crate::ops::wrap(*v, w))))
            .collect();
        Self::new(p, w, &regs, depth)
    }

    pub fn initial(&self) -> SymState {
        SymState {
            phase: Phase::Run(self.init.clone()),
            view: View::new(),
            pending: None,
            lib_calls: 0,
        }
    }

    pub fn ctx(&self) -> Ctx<'_> {
        Ctx {
            p: self.p,
            w: self.w,
            pool: &self.pool,
            lib_boundary: true,
        }
    }

    fn term(&self, v: &SymValue) -> Option<Term> {
        value_term(v, self.w)
    }

    /// One symbolic rule; a pending state consumes exactly one choice.
    pub fn step(&self, s: &SymState, choice: Option<&Choice>) -> Result<SymStep, SymError> {
        if let Some(p) = &s.pending {
            let c = choice.ok_or(SymError::ChoiceRequired)?;
            return self.answer(s, p, c);
        }
        if choice.is_some() {
            return Err(SymError::UnexpectedChoice);
        }
        match &s.phase {
            Phase::Done | Phase::Stuck(_) => Err(SymError::Terminal),
            Phase::Returned { .. } => {
                let mut next = s.clone();
                let e = ViewEvent::Out {
                    label: FINAL_CALL.into(),
                    terms: vec![Term::constant(FINAL_CALL)],
                };
                next.view.push(e.clone());
                next.phase = Phase::Done;
                Ok(SymStep {
                    rule: "AdvFin".into(),
                    events: vec![e],
                    next,
                })
            }
            Phase::Run(m) => Ok(self.run_step(s, m.clone())),
        }
    }

    fn answer(&self, s: &SymState, p: &Pending, c: &Choice) -> Result<SymStep, SymError> {
        let Phase::Run(mut m) = s.phase.clone() else {
            return Err(SymError::Terminal);
        };
        let bad = |why: &str| Err(SymError::InvalidChoice(why.into()));
        let (term, recipe, rule) = match (p, c) {
            (Pending::Result(dst), Choice::Term { term, recipe }) => {
                if recipe.depth() > self.depth {
                    return bad("recipe deeper than the configured depth");
                }
                if self
                    .model
                    .eval_checked(recipe, &s.view.out_terms())
                    .as_ref()
                    != Some(term)
                {
                    return bad("recipe does not evaluate to the term");
                }
                match dst {
                    Dst::Reg(a) => {
                        m.set(*a, SymValue::Sym(term.clone()));
                        m.advance(1);
                    }
                    Dst::Res => m.resume(SymValue::Sym(term.clone()), SymValue::Void),
                }
                (term.clone(), recipe.clone(), "In")
            }
            (Pending::Branch { offset }, Choice::Index(i @ (0 | 1))) => {
                let t = branch_term(*i == 0, self.w);
                m.advance(if *i == 0 { *offset } else { 1 });
                (t.clone(), SymOp::from_term(&t), "In-branch")
            }
            (Pending::Cmp { a }, Choice::Index(i @ 0..=2)) => {
                let v = *i as i64 - 1;
                let t = iota_encode(&num_to_bits(v, self.w));
                m.set(*a, SymValue::Num(v));
                m.advance(1);
                (t.clone(), SymOp::from_term(&t), "In-cmp")
            }
            _ => return bad("choice kind does not match the pending query"),
        };
        let e = ViewEvent::In { term, recipe };
        let mut next = s.clone();
        next.phase = Phase::Run(m);
        next.pending = None;
        next.view.push(e.clone());
        Ok(SymStep {
            rule: rule.into(),
            events: vec![e],
            next,
        })
    }

    /// Emit `out(label, operands)` and wait for the answer.
    fn query(
        &self,
        label: String,
        ops: &[SymValue],
        p: Pending,
        next: &mut SymState,
        events: &mut Vec<ViewEvent>,
    ) {
        match ops.iter().map(|v| self.term(v)).collect::<Option<Vec<_>>>() {
            Some(terms) => {
                let e = ViewEvent::Out { label, terms };
                events.push(e.clone());
                next.view.push(e);
                next.pending = Some(p);
            }
            None => next.phase = Phase::Stuck("operand without a term".into()),
        }
    }

    fn run_step(&self, s: &SymState, mut m: Machine<SymValue>) -> SymStep {
        let mut next = s.clone();
        let mut events = Vec::new();
        let stuck = |next: &mut SymState, why: String| {
            next.phase = Phase::Stuck(why);
        };
        let Some(instr) = m.current(self.p).cloned() else {
            stuck(&mut next, "fetch: program point outside method".into());
            return SymStep {
                rule: "fetch".into(),
                events,
                next,
            };
        };
        let mut rule: String = crate::machine::rule_name(&instr).into();
        let routed = match &instr {
            Instr::Unop { a, b, op } => Some((*a, vec![m.reg(*b)], op.name(), "Unop")),
            Instr::Binop { a, b, c, op } => {
                Some((*a, vec![m.reg(*b), m.reg(*c)], op.name(), "Binop"))
            }
            _ => None,
        };
        if let Some((a, ops, name, fam)) = routed {
            match route(&ops) {
                Route::Concrete => {}
                r => {
                    if r == Route::Library {
                        let terms: Vec<Term> = ops.iter().filter_map(|v| self.term(v)).collect();
                        if let Ok(Some(u)) = self.model.apply(&format!("d_{name}"), &terms) {
                            m.set(a, SymValue::Sym(u));
                            m.advance(1);
                            next.phase = Phase::Run(m);
                            return SymStep {
                                rule: format!("{fam}-l"),
                                events,
                                next,
                            };
                        }
                    }
                    self.query(
                        format!("c_{name}"),
                        &ops,
                        Pending::Result(Dst::Reg(a)),
                        &mut next,
                        &mut events,
                    );
                    if next.pending.is_some() {
                        next.phase = Phase::Run(m);
                    }
                    return SymStep {
                        rule: format!("{fam}-m"),
                        events,
                        next,
                    };
                }
            }
        }
        let tested = match &instr {
            Instr::Cmp { a, b, c } => Some((
                vec![m.reg(*b), m.reg(*c)],
                "c_cmp".to_string(),
                Pending::Cmp { a: *a },
                "Cmp-m",
            )),
            Instr::IfTest { a, b, n, op } => Some((
                vec![m.reg(*a), m.reg(*b)],
                format!("c_{}", op.name()),
                Pending::Branch { offset: *n },
                "IfTest-m",
            )),
            Instr::IfTestz { a, n, op } => Some((
                vec![m.reg(*a), SymValue::Num(0)],
                format!("c_{}", op.name()),
                Pending::Branch { offset: *n },
                "IfTestz-m",
            )),
            _ => None,
        };
        if let Some((ops, label, p, r)) = tested {
            if ops.iter().any(|v| operand_class(v) != OperandClass::D) {
                self.query(label, &ops, p, &mut next, &mut events);
                if next.pending.is_some() {
                    next.phase = Phase::Run(m);
                }
                return SymStep {
                    rule: r.into(),
                    events,
                    next,
                };
            }
        }
        if let Instr::Rand { .. } = instr {
            stuck(&mut next, "Prob: honest program draws randomness".into());
            return SymStep { rule, events, next };
        }
        match m.step(&self.ctx()) {
            Transition::Applied(r) => {
                rule = r.into();
                next.phase = Phase::Run(m);
            }
            Transition::Rand(_) => stuck(&mut next, "Prob: honest program draws randomness".into()),
            Transition::Mal { mid, args } => {
                rule = "Mal-m".into();
                self.query(
                    format!("mal_{mid}"),
                    &args,
                    Pending::Result(Dst::Res),
                    &mut next,
                    &mut events,
                );
                if next.pending.is_some() {
                    next.phase = Phase::Run(m);
                }
            }
            Transition::Lib {
                mid,
                class,
                args,
                receiver,
                ..
            } => {
                rule = "rIDR-s".into();
                let f = m.top();
                let site = format!("{}:{}", f.method, f.pp);
                let entry = m
                    .heap
                    .get(&receiver)
                    .and_then(|c| self.spec.resolve(&mid, c));
                let Some((_, op)) = entry else {
                    stuck(&mut next, format!("rIDR-s: no library entry for {class}.{mid} matches the receiver at {site}"));
                    return SymStep { rule, events, next };
                };
                let op = fresh_nonces(op, s.lib_calls);
                let inputs: Option<Vec<Term>> = args.iter().skip(1).map(|v| self.term(v)).collect();
                let out = inputs.and_then(|xs| self.model.eval_op(&op, &xs).ok().flatten());
                match out {
                    Some(t) => {
                        m.resume(SymValue::Sym(t), SymValue::Void);
                        next.lib_calls += 1;
                        next.phase = Phase::Run(m);
                    }
                    None => stuck(
                        &mut next,
                        format!("rIDR-s: {class}.{mid} at {site} evaluates to bottom"),
                    ),
                }
            }
            Transition::Final(v) => {
                rule = "rReturn".into();
                next.phase = Phase::Returned {
                    value: v,
                    heap: m.heap,
                };
            }
            Transition::Stuck(st) => stuck(&mut next, st.to_string()),
        }
        SymStep { rule, events, next }
    }

    /// Whether the answer to a pending call is never read.
    /// Whether the pending answer is discarded by the next instruction.
    pub fn response_unused(&self, s: &SymState) -> bool {
        let Phase::Run(m) = &s.phase else {
            return false;
        };
        let f = m.top();
        let nxt = self
            .p
            .methods
            .get(&f.method)
            .and_then(|mm| mm.body.get(f.pp + 1));
        !matches!(nxt, Some(Instr::MoveResult { .. }))
    }

    /// The adversary's finite move set at a pending state.
    pub fn choices(&self, s: &SymState) -> Result<Vec<Choice>, SymError> {
        Ok(match &s.pending {
            None => vec![],
            Some(Pending::Branch { .. }) => vec![Choice::Index(0), Choice::Index(1)],
            Some(Pending::Cmp { .. }) => (0..3).map(Choice::Index).collect(),
            Some(Pending::Result(Dst::Res)) if self.response_unused(s) => vec![canonical_choice()],
            Some(Pending::Result(_)) => {
                joint_choices(&self.model, &self.sig, vec![s.view.out_terms()], self.depth)?
                    .into_iter()
                    .map(|(recipe, mut vals)| Choice::Term {
                        term: vals.remove(0),
                        recipe,
                    })
                    .collect()
            }
        })
    }

    /// Run until a choice is needed, the state is terminal or the step budget is spent.
    pub fn advance(&self, s: &SymState, trace: &mut Vec<SymStep>) -> Result<SymState, SymError> {
        let mut cur = s.clone();
        let mut n = 0u64;
        while cur.pending.is_none() && !cur.is_terminal() && n < self.max_steps {
            let st = self.step(&cur, None)?;
            cur = st.next.clone();
            trace.push(st);
            n += 1;
        }
        Ok(cur)
    }

    /// Replay a choice script from the initial state. Stops when the script
    /// runs out at a pending state.
    pub fn replay(&self, script: &[Choice]) -> Result<(SymState, Vec<SymStep>), SymError> {
        let mut trace = Vec::new();
        let mut cur = self.advance(&self.initial(), &mut trace)?;
        for c in script {
            if cur.pending.is_none() {
                return Err(SymError::UnexpectedChoice);
            }
            let st = self.step(&cur, Some(c))?;
            cur = st.next.clone();
            trace.push(st);
            cur = self.advance(&cur, &mut trace)?;
        }
        Ok((cur, trace))
    }

    /// Every view reachable with at most `budget` answered adversary queries; a
    /// query beyond the budget stays in the view unanswered.
    pub fn enumerate_views(&self, budget: usize) -> Result<ViewSet, SymError> {
        let mut out = ViewSet::default();
        let mut stack = vec![self.initial()];
        while let Some(s) = stack.pop() {
            let cur = self.advance(&s, &mut Vec::new())?;
            if cur.is_terminal() {
                if matches!(cur.phase, Phase::Stuck(_)) {
                    out.stuck += 1;
                }
                out.views.insert(cur.view);
            } else if cur.pending.is_none() || cur.interactions() > budget {
                out.truncated += 1;
                out.views.insert(cur.view);
            } else {
                for c in self.choices(&cur)? {
                    let st = self.step(&cur, Some(&c))?;
                    debug_assert!(st.next.view.is_sound(&self.model));
                    stack.push(st.next);
                }
            }
            if out.views.len() > MAX_VIEWS {
                return Err(SymError::Explosion);
            }
        }
        Ok(out)
    }
}

/// Answer used when the response is never read.
pub fn canonical_choice() -> Choice {
    Choice::Term {
        term: Term::constant("emp"),
        recipe: SymOp::constant("emp"),
    }
}
