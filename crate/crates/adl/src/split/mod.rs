//! Probabilistic transition systems, the three-way split-state composition
//! and its execution.

mod adl;

pub use adl::{
    adl_split, rename_into, AdlSplit, AttackerPts, HState, HonestPts, LState, LibraryPts,
    SplitError,
};

use crate::concrete::{seeded, Rng};
use crate::machine::{Heap, Value};
use crate::ops::mask;
use crate::prob::{Dist, Outcome};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rand::Rng as _;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Out,
    In,
    Lc,
    Lr,
    Final,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(tag = "label", rename_all = "lowercase")]
pub enum SsLabel {
    /// Honest program to attacker.
    Out { fname: String, payload: Vec<Value> },
    /// Attacker to honest program.
    In { payload: Value },
    /// Honest program to library.
    Lc {
        fname: String,
        class: String,
        method: String,
        args: Vec<Value>,
        slice: Heap<Value>,
    },
    /// Library to honest program.
    Lr {
        lo: Value,
        up: Value,
        heap: Heap<Value>,
    },
    /// Attacker output; ends the composed run.
    Final { payload: String },
}

pub const FINAL_CALL: &str = "finalCall";

impl SsLabel {
    pub fn kind(&self) -> LabelKind {
        match self {
            SsLabel::Out { .. } => LabelKind::Out,
            SsLabel::In { .. } => LabelKind::In,
            SsLabel::Lc { .. } => LabelKind::Lc,
            SsLabel::Lr { .. } => LabelKind::Lr,
            SsLabel::Final { .. } => LabelKind::Final,
        }
    }
}

pub type Pick<'a, S> = Box<dyn Fn(u64) -> (S, u64) + 'a>;

/// How a state moves on.
pub enum Classify<'a, S> {
    /// Internal probabilistic step: (probability, successor, cost).
    Prob(Vec<(BigRational, S, u64)>),
    /// Uniform choice among `2^bits` successors, indexed by a raw `bits`-bit draw.
    Uniform {
        bits: u32,
        pick: Pick<'a, S>,
    },
    /// Labeled transitions; empty means final.
    Nondet(Vec<(SsLabel, S, u64)>),
    /// Only input transitions are possible.
    Waiting,
    Stuck(String),
}

/// A probabilistic transition system with labeled synchronization points.
pub trait Pts {
    type S: Clone + Debug + PartialEq;
    fn initial(&self) -> Self::S;
    fn classify(&self, s: &Self::S) -> Classify<'_, Self::S>;
    /// Accept an input label, giving the successor and its cost.
    fn receive(&self, s: &Self::S, l: &SsLabel) -> Option<(Self::S, u64)>;
    fn alphabet(&self) -> BTreeSet<LabelKind>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Who {
    Honest,
    Attacker,
    Library,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedState<H, A, L> {
    /// The active component; `None` once the attacker has produced its output.
    pub active: Option<Who>,
    pub h: H,
    pub a: A,
    pub l: L,
}

pub struct Composed<H, A, L> {
    pub h: H,
    pub a: A,
    pub l: L,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompositionError {
    #[error("{who:?} uses labels {bad:?} outside its allowed set")]
    Alphabet { who: Who, bad: Vec<LabelKind> },
}

/// Compose honest program, attacker and library.
pub fn compose3<H: Pts, A: Pts, L: Pts>(
    h: H,
    a: A,
    l: L,
) -> Result<Composed<H, A, L>, CompositionError> {
    use LabelKind::*;
    for (who, alpha, allowed) in [
        (Who::Honest, h.alphabet(), vec![Out, In, Lc, Lr]),
        (Who::Attacker, a.alphabet(), vec![Out, In, Final]),
        (Who::Library, l.alphabet(), vec![Lc, Lr]),
    ] {
        let bad: Vec<_> = alpha.into_iter().filter(|k| !allowed.contains(k)).collect();
        if !bad.is_empty() {
            return Err(CompositionError::Alphabet { who, bad });
        }
    }
    Ok(Composed { h, a, l })
}

fn receiver(k: LabelKind) -> Option<Who> {
    match k {
        LabelKind::Out => Some(Who::Attacker),
        LabelKind::In | LabelKind::Lr => Some(Who::Honest),
        LabelKind::Lc => Some(Who::Library),
        LabelKind::Final => None,
    }
}

type CState<H, A, L> = ComposedState<<H as Pts>::S, <A as Pts>::S, <L as Pts>::S>;

impl<H: Pts, A: Pts, L: Pts> Composed<H, A, L> {
    fn with(
        &self,
        s: &CState<H, A, L>,
        who: Who,
        f: impl FnOnce(&mut CState<H, A, L>),
    ) -> CState<H, A, L> {
        let mut n = s.clone();
        n.active = Some(who);
        f(&mut n);
        n
    }

    fn classify_of<'a, T: Pts>(
        &'a self,
        comp: &'a T,
        s: CState<H, A, L>,
        own: &T::S,
        who: Who,
        put: impl Fn(&mut CState<H, A, L>, T::S) + Copy + 'a,
    ) -> Classify<'a, CState<H, A, L>> {
        match comp.classify(own) {
            Classify::Prob(bs) => Classify::Prob(
                bs.into_iter()
                    .map(|(p, x, c)| (p, self.with(&s, who, |n| put(n, x)), c))
                    .collect(),
            ),
            Classify::Uniform { bits, pick } => Classify::Uniform {
                bits,
                pick: Box::new(move |i| {
                    let (x, c) = pick(i);
                    (self.with(&s, who, |n| put(n, x)), c)
                }),
            },
            Classify::Nondet(ls) => {
                let mut out = Vec::new();
                for (label, x, c) in ls {
                    let mut n = self.with(&s, who, |n| put(n, x));
                    match receiver(label.kind()) {
                        None => {
                            n.active = None;
                            out.push((label, n, c));
                        }
                        Some(r) => {
                            let got = match r {
                                Who::Honest => self.h.receive(&n.h, &label).map(|(y, c2)| {
                                    n.h = y;
                                    c2
                                }),
                                Who::Attacker => self.a.receive(&n.a, &label).map(|(y, c2)| {
                                    n.a = y;
                                    c2
                                }),
                                Who::Library => self.l.receive(&n.l, &label).map(|(y, c2)| {
                                    n.l = y;
                                    c2
                                }),
                            };
                            let Some(c2) = got else {
                                return Classify::Stuck(format!(
                                    "{r:?} refuses {:?} from {who:?}",
                                    label.kind()
                                ));
                            };
                            n.active = Some(r);
                            out.push((label, n, c + c2));
                        }
                    }
                }
                Classify::Nondet(out)
            }
            Classify::Waiting => Classify::Stuck(format!("{who:?} is active but waiting")),
            Classify::Stuck(r) => Classify::Stuck(r),
        }
    }
}

impl<H: Pts, A: Pts, L: Pts> Pts for Composed<H, A, L> {
    type S = CState<H, A, L>;

    fn initial(&self) -> Self::S {
        ComposedState {
            active: Some(Who::Honest),
            h: self.h.initial(),
            a: self.a.initial(),
            l: self.l.initial(),
        }
    }

    fn classify(&self, s: &Self::S) -> Classify<'_, Self::S> {
        let owned = s.clone();
        match s.active {
            None => Classify::Nondet(vec![]),
            Some(Who::Honest) => {
                self.classify_of(&self.h, owned, &s.h, Who::Honest, |n, x| n.h = x)
            }
            Some(Who::Attacker) => {
                self.classify_of(&self.a, owned, &s.a, Who::Attacker, |n, x| n.a = x)
            }
            Some(Who::Library) => {
                self.classify_of(&self.l, owned, &s.l, Who::Library, |n, x| n.l = x)
            }
        }
    }

    fn receive(&self, _: &Self::S, _: &SsLabel) -> Option<(Self::S, u64)> {
        None
    }

    fn alphabet(&self) -> BTreeSet<LabelKind> {
        BTreeSet::from([
            LabelKind::Out,
            LabelKind::In,
            LabelKind::Lc,
            LabelKind::Lr,
            LabelKind::Final,
        ])
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DownError {
    #[error("more than {0} branches")]
    Explosion(usize),
    #[error("unresolved nondeterminism with {0} choices")]
    Nondeterministic(usize),
}

pub const MAX_BRANCHES: usize = 1_000_000;

/// Result of following one choice out of a state.
enum Move<S> {
    Go(S, u64, Option<SsLabel>),
    End(Outcome, u64, Option<SsLabel>),
}

fn moves<T: Pts>(t: &T, s: &T::S) -> Result<Vec<(BigRational, Move<T::S>)>, DownError> {
    Ok(match t.classify(s) {
        Classify::Prob(bs) => bs
            .into_iter()
            .map(|(p, x, c)| (p, Move::Go(x, c, None)))
            .collect(),
        Classify::Uniform { bits, pick } => {
            if bits >= 63 || (1u64 << bits) as usize > MAX_BRANCHES {
                return Err(DownError::Explosion(MAX_BRANCHES));
            }
            let count = 1u64 << bits;
            let p = BigRational::new(BigInt::one(), BigInt::from(count));
            (0..count)
                .map(|i| {
                    let (x, c) = pick(i);
                    (p.clone(), Move::Go(x, c, None))
                })
                .collect()
        }
        Classify::Nondet(ls) => match ls.len() {
            0 => vec![(
                BigRational::one(),
                Move::End(Outcome::Stuck("final without output".into()), 0, None),
            )],
            1 => {
                let (l, x, c) = ls.into_iter().next().expect("one label");
                let m = match &l {
                    SsLabel::Final { payload } => {
                        Move::End(Outcome::Adv(payload.clone()), c, Some(l))
                    }
                    _ => Move::Go(x, c, Some(l)),
                };
                vec![(BigRational::one(), m)]
            }
            k => return Err(DownError::Nondeterministic(k)),
        },
        Classify::Waiting => vec![(
            BigRational::one(),
            Move::End(Outcome::Stuck("deadlock".into()), 0, None),
        )],
        Classify::Stuck(r) => vec![(BigRational::one(), Move::End(Outcome::Stuck(r), 0, None))],
    })
}

/// Exact `Pr[T ↓_n x]` for every outcome `x`.
pub fn downarrow_exact<T: Pts>(t: &T, n: u64) -> Result<Dist<BigRational>, DownError> {
    let mut dist = Dist::default();
    let mut stack = vec![(t.initial(), BigRational::one(), 0u64)];
    let mut expanded = 0;
    while let Some((s, p, total)) = stack.pop() {
        expanded += 1;
        if expanded > MAX_BRANCHES {
            return Err(DownError::Explosion(MAX_BRANCHES));
        }
        for (q, m) in moves(t, &s)? {
            let q = &p * q;
            let (c, end) = match &m {
                Move::Go(_, c, _) => (*c, None),
                Move::End(o, c, _) => (*c, Some(o.clone())),
            };
            if total + c > n {
                dist.add(Outcome::Timeout, q);
                continue;
            }
            match (m, end) {
                (Move::Go(x, c, _), _) => stack.push((x, q, total + c)),
                (_, Some(o)) => dist.add(o, q),
                _ => unreachable!(),
            }
        }
    }
    Ok(dist)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub from: Who,
    pub label: SsLabel,
    pub cost: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SsRun {
    pub outcome: Outcome,
    pub trace: Vec<TraceEntry>,
    pub steps: u64,
}

/// One sampled run of a composed system.
pub fn run_sampled<H: Pts, A: Pts, L: Pts>(
    t: &Composed<H, A, L>,
    rng: &mut Rng,
    n: u64,
) -> Result<SsRun, DownError> {
    let mut s = t.initial();
    let mut trace = Vec::new();
    let mut total = 0;
    loop {
        let from = s.active;
        let ms = match t.classify(&s) {
            Classify::Uniform { bits, pick } => {
                let (x, c) = pick(rng.gen::<u64>() & mask(bits));
                vec![(BigRational::one(), Move::Go(x, c, None))]
            }
            _ => moves(t, &s)?,
        };
        let mut u: f64 = rng.gen();
        let last = ms.len() - 1;
        let mut chosen = None;
        for (i, (p, m)) in ms.into_iter().enumerate() {
            let p = p.to_f64().unwrap_or(0.0);
            if u < p || i == last {
                chosen = Some(m);
                break;
            }
            u -= p;
        }
        let m = chosen.expect("at least one move");
        let (c, label) = match &m {
            Move::Go(_, c, l) | Move::End(_, c, l) => (*c, l.clone()),
        };
        if total + c > n {
            return Ok(SsRun {
                outcome: Outcome::Timeout,
                trace,
                steps: total,
            });
        }
        total += c;
        if let (Some(label), Some(from)) = (label, from) {
            trace.push(TraceEntry {
                from,
                label,
                cost: c,
            });
        }
        match m {
            Move::Go(x, ..) => s = x,
            Move::End(o, ..) => {
                return Ok(SsRun {
                    outcome: o,
                    trace,
                    steps: total,
                })
            }
        }
    }
}

/// Monte-Carlo estimate of `Pr[T ↓_n x]`.
pub fn downarrow_mc<H: Pts, A: Pts, L: Pts>(
    t: &Composed<H, A, L>,
    n: u64,
    trials: u64,
    seed: u64,
) -> Result<Dist<f64>, DownError> {
    let mut counts: BTreeMap<Outcome, u64> = BTreeMap::new();
    for i in 0..trials {
        let r = run_sampled(t, &mut seeded(seed.wrapping_add(i)), n)?;
        *counts.entry(r.outcome).or_default() += 1;
    }
    Ok(Dist {
        probs: counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / trials as f64))
            .collect(),
    })
}

/// Subsequence of labels whose kind is in `kinds`.
pub fn project_trace(trace: &[SsLabel], kinds: &BTreeSet<LabelKind>) -> Vec<SsLabel> {
    trace
        .iter()
        .filter(|l| kinds.contains(&l.kind()))
        .cloned()
        .collect()
}
