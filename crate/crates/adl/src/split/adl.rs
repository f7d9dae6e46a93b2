//! ADL programs as honest, attacker and library components.

use super::{compose3, Classify, Composed, CompositionError, LabelKind, Pts, SsLabel, FINAL_CALL};
use crate::bytecode::{static_rand_scan, Diagnostic, Program, Reg};
use crate::concrete::{AdvInput, AdvResponse, AdvState, Attacker};
use crate::machine::{
    heap_slice, initial_machine, next_free, Cell, ConstPool, Ctx, Frame, Heap, Loc, Machine, Regs,
    Transition, Val, Value,
};
use crate::ops::wrap;
use num_rational::BigRational;
use num_traits::One;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

fn tau<S>(s: S, cost: u64) -> Classify<'static, S> {
    Classify::Prob(vec![(BigRational::one(), s, cost)])
}

#[derive(Debug, Clone, PartialEq)]
pub enum HState {
    Run(Machine<Value>),
    Returned {
        value: Value,
        heap: Heap<Value>,
    },
    AwaitIn(Machine<Value>),
    /// Waiting for the library; keeps the locations handed over.
    AwaitLr(Machine<Value>, BTreeSet<Loc>),
    Done,
}

/// The honest program, cut at malicious and library-bound calls.
pub struct HonestPts<'a> {
    pub p: &'a Program,
    pub w: u32,
    pool: ConstPool,
    init: Machine<Value>,
}

impl<'a> HonestPts<'a> {
    pub fn new(p: &'a Program, w: u32, regs: &BTreeMap<Reg, i64>) -> Self {
        let regs = regs
            .iter()
            .map(|(k, v)| (*k, Value::Num(wrap(*v, w))))
            .collect();
        let (pool, init) = initial_machine(p, &regs);
        HonestPts { p, w, pool, init }
    }

    fn ctx(&self) -> Ctx<'_> {
        Ctx {
            p: self.p,
            w: self.w,
            pool: &self.pool,
            lib_boundary: true,
        }
    }
}

/// Merge a heap returned by the library into `h`.
///
/// Locations of `returned` outside `slice` are fresh; they are moved, in
/// ascending order, to successive free locations of `h`. Returns the renaming.
pub fn rename_into(
    h: &mut Heap<Value>,
    slice: &BTreeSet<Loc>,
    returned: Heap<Value>,
) -> BTreeMap<Loc, Loc> {
    let mut ren = BTreeMap::new();
    let mut taken = h.clone();
    for l in returned.keys().filter(|l| !slice.contains(l)) {
        let to = next_free(&taken);
        taken.insert(to, Cell::Array { cells: vec![] });
        ren.insert(*l, to);
    }
    for (l, c) in &returned {
        h.insert(*ren.get(l).unwrap_or(l), c.map(&mut |v| apply(&ren, v)));
    }
    ren
}

fn apply(ren: &BTreeMap<Loc, Loc>, v: &Value) -> Value {
    match v {
        Value::Loc(l) => Value::Loc(*ren.get(l).unwrap_or(l)),
        _ => v.clone(),
    }
}

impl Pts for HonestPts<'_> {
    type S = HState;

    fn initial(&self) -> HState {
        HState::Run(self.init.clone())
    }

    fn classify(&self, s: &HState) -> Classify<'_, HState> {
        let m = match s {
            HState::Run(m) => m,
            HState::Returned { .. } => {
                let out = SsLabel::Out {
                    fname: FINAL_CALL.into(),
                    payload: vec![],
                };
                return Classify::Nondet(vec![(out, HState::Done, 1)]);
            }
            HState::AwaitIn(_) | HState::AwaitLr(..) | HState::Done => return Classify::Waiting,
        };
        let mut next = m.clone();
        match next.step(&self.ctx()) {
            Transition::Applied(_) => tau(HState::Run(next), 1),
            Transition::Final(value) => tau(
                HState::Returned {
                    value,
                    heap: next.heap,
                },
                1,
            ),
            Transition::Rand(_) => {
                Classify::Stuck("pre-compliance (iii): honest program draws randomness".into())
            }
            Transition::Mal { mid, args } => Classify::Nondet(vec![(
                SsLabel::Out {
                    fname: mid,
                    payload: args,
                },
                HState::AwaitIn(m.clone()),
                1,
            )]),
            Transition::Lib {
                mid,
                class,
                label,
                args,
                receiver,
            } => {
                let slice = heap_slice(&m.heap, receiver);
                let keys = slice.keys().copied().collect();
                let lc = SsLabel::Lc {
                    fname: mid,
                    class,
                    method: label,
                    args,
                    slice,
                };
                Classify::Nondet(vec![(lc, HState::AwaitLr(m.clone(), keys), 1)])
            }
            Transition::Stuck(st) => Classify::Stuck(st.to_string()),
        }
    }

    fn receive(&self, s: &HState, l: &SsLabel) -> Option<(HState, u64)> {
        match (s, l) {
            (HState::AwaitIn(m), SsLabel::In { payload }) => {
                let mut m = m.clone();
                m.resume(payload.lo(), payload.up());
                Some((HState::Run(m), 0))
            }
            (HState::AwaitLr(m, keys), SsLabel::Lr { lo, up, heap }) => {
                let mut m = m.clone();
                let ren = rename_into(&mut m.heap, keys, heap.clone());
                m.resume(apply(&ren, lo), apply(&ren, up));
                Some((HState::Run(m), 0))
            }
            _ => None,
        }
    }

    fn alphabet(&self) -> BTreeSet<LabelKind> {
        BTreeSet::from([LabelKind::Out, LabelKind::In, LabelKind::Lc, LabelKind::Lr])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AState {
    Idle(AdvState),
    Busy(AdvState, AdvInput),
    Ready {
        state: AdvState,
        response: AdvResponse,
        last: bool,
    },
}

/// An external attacker reacting to `Out` labels.
pub struct AttackerPts<'a> {
    pub a: &'a dyn Attacker,
}

impl Pts for AttackerPts<'_> {
    type S = AState;

    fn initial(&self) -> AState {
        AState::Idle(self.a.initial())
    }

    fn classify(&self, s: &AState) -> Classify<'_, AState> {
        match s {
            AState::Idle(_) => Classify::Waiting,
            AState::Busy(st, input) => {
                let last = *input == AdvInput::Final;
                Classify::Prob(
                    self.a
                        .respond(st, input)
                        .into_iter()
                        .map(|b| {
                            let next = AState::Ready {
                                state: b.state,
                                response: b.response,
                                last,
                            };
                            (b.prob, next, b.steps)
                        })
                        .collect(),
                )
            }
            AState::Ready {
                state,
                response,
                last,
            } => match response {
                AdvResponse::Advr(t) => Classify::Nondet(vec![(
                    SsLabel::Final { payload: t.clone() },
                    AState::Idle(state.clone()),
                    1,
                )]),
                AdvResponse::Value(_) if *last => {
                    Classify::Stuck("AdvFin: response outside ADVR".into())
                }
                AdvResponse::Value(v) => Classify::Nondet(vec![(
                    SsLabel::In { payload: v.clone() },
                    AState::Idle(state.clone()),
                    1,
                )]),
            },
        }
    }

    fn receive(&self, s: &AState, l: &SsLabel) -> Option<(AState, u64)> {
        let (AState::Idle(st), SsLabel::Out { fname, payload }) = (s, l) else {
            return None;
        };
        let input = if fname == FINAL_CALL {
            AdvInput::Final
        } else {
            AdvInput::Call {
                mid: fname.clone(),
                args: payload.clone(),
            }
        };
        Some((AState::Busy(st.clone(), input), 0))
    }

    fn alphabet(&self) -> BTreeSet<LabelKind> {
        BTreeSet::from([LabelKind::Out, LabelKind::In, LabelKind::Final])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LState {
    Idle,
    Run(Machine<Value>),
}

/// Library-bound methods, run on the heap slice they receive.
pub struct LibraryPts<'a> {
    pub p: &'a Program,
    pub w: u32,
    pool: ConstPool,
}

impl<'a> LibraryPts<'a> {
    pub fn new(p: &'a Program, w: u32) -> Self {
        let (pool, _) = ConstPool::build::<Value>(p);
        LibraryPts { p, w, pool }
    }

    fn ctx(&self) -> Ctx<'_> {
        Ctx {
            p: self.p,
            w: self.w,
            pool: &self.pool,
            lib_boundary: false,
        }
    }
}

impl Pts for LibraryPts<'_> {
    type S = LState;

    fn initial(&self) -> LState {
        LState::Idle
    }

    fn classify(&self, s: &LState) -> Classify<'_, LState> {
        let LState::Run(m) = s else {
            return Classify::Waiting;
        };
        let ctx = self.ctx();
        let mut next = m.clone();
        match next.step(&ctx) {
            Transition::Applied(_) => tau(LState::Run(next), 1),
            Transition::Rand(reg) => {
                let m = m.clone();
                let w = self.w;
                Classify::Uniform {
                    bits: w,
                    pick: Box::new(move |raw| {
                        let mut m = m.clone();
                        m.set(reg, Value::Num(wrap(raw as i64, w)));
                        m.advance(1);
                        (LState::Run(m), 1)
                    }),
                }
            }
            Transition::Mal { .. } => {
                Classify::Stuck("pre-compliance (ii): library invokes the adversary".into())
            }
            Transition::Final(v) => Classify::Nondet(vec![(
                SsLabel::Lr {
                    lo: v.lo(),
                    up: v.up(),
                    heap: next.heap,
                },
                LState::Idle,
                1,
            )]),
            Transition::Lib { .. } => unreachable!("library boundary is off"),
            Transition::Stuck(st) => match m.accessed_loc(&ctx) {
                Some(l) if !m.heap.contains_key(&l) => Classify::Stuck(format!(
                    "pre-compliance (i): library reads @{l} outside its heap slice"
                )),
                _ => Classify::Stuck(st.to_string()),
            },
        }
    }

    fn receive(&self, s: &LState, l: &SsLabel) -> Option<(LState, u64)> {
        let (
            LState::Idle,
            SsLabel::Lc {
                method,
                args,
                slice,
                ..
            },
        ) = (s, l)
        else {
            return None;
        };
        let m = Machine {
            frames: vec![Frame {
                method: method.clone(),
                pp: 0,
                regs: Regs::def_reg(args.clone()),
            }],
            heap: slice.clone(),
        };
        Some((LState::Run(m), 0))
    }

    fn alphabet(&self) -> BTreeSet<LabelKind> {
        BTreeSet::from([LabelKind::Lc, LabelKind::Lr])
    }
}

pub type AdlSplit<'a> = Composed<HonestPts<'a>, AttackerPts<'a>, LibraryPts<'a>>;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("randomness outside library-bound methods: {}", .0.iter().map(|d| d.message.as_str()).collect::<Vec<_>>().join("; "))]
    RandOutsideLibrary(Vec<Diagnostic>),
    #[error(transparent)]
    Composition(#[from] CompositionError),
}

/// Split an ADL program into honest program, attacker and library.
pub fn adl_split<'a>(
    p: &'a Program,
    w: u32,
    attacker: &'a dyn Attacker,
    regs: &BTreeMap<Reg, i64>,
) -> Result<AdlSplit<'a>, SplitError> {
    let scan = static_rand_scan(p);
    if !scan.is_empty() {
        return Err(SplitError::RandOutsideLibrary(scan));
    }
    Ok(compose3(
        HonestPts::new(p, w, regs),
        AttackerPts { a: attacker },
        LibraryPts::new(p, w),
    )?)
}
