//! Concrete probabilistic execution of ADL programs against an external attacker.

mod attacker;

pub use attacker::{
    AdvBranch, AdvInput, AdvResponse, AdvState, Attacker, Echo, Guess, ScriptLine, Scripted,
};

use crate::bytecode::{Program, Reg};
use crate::machine::{initial_machine, ConstPool, Ctx, Heap, Machine, Transition, Val, Value};
use crate::ops::{mask, wrap};
use crate::prob::{Dist, Outcome};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw from the `w`-bit integers.
pub fn draw(rng: &mut Rng, w: u32) -> i64 {
    wrap((rng.gen::<u64>() & mask(w)) as i64, w)
}

/// Largest `|N|` for exhaustive enumeration of `rand`.
pub const MAX_EXHAUSTIVE_WIDTH: u32 = 8;
pub const MAX_BRANCHES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Config {
    Running(Machine<Value>),
    /// `rReturnF` fired; the attacker still gets the final call.
    Returned {
        value: Value,
        heap: Heap<Value>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct State {
    pub config: Config,
    pub adv: AdvState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum Event {
    Rand { reg: Reg, value: i64 },
    Out { mid: String, args: Vec<Value> },
    In { response: AdvResponse },
    Final,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Next {
    State(State),
    Done(Outcome),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub next: Next,
    pub steps: u64,
    pub rule: String,
    pub events: Vec<Event>,
}

enum Succ {
    One(Step),
    Uniform { reg: Reg, state: State },
    Branches(Vec<(BigRational, Step)>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Run {
    pub outcome: Outcome,
    pub trace: Vec<Event>,
    pub steps: u64,
    pub rules: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DistError {
    #[error("exhaustive mode needs a width of at most {MAX_EXHAUSTIVE_WIDTH} bits, got {0}")]
    Width(u32),
    #[error("more than {MAX_BRANCHES} branches")]
    Explosion,
}

pub struct Vm<'a> {
    pub p: &'a Program,
    pub w: u32,
    pool: ConstPool,
    attacker: Option<&'a dyn Attacker>,
}

fn ratio(n: u64, d: u64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

impl<'a> Vm<'a> {
    pub fn new(p: &'a Program, w: u32, attacker: Option<&'a dyn Attacker>) -> Self {
        let (pool, _) = ConstPool::build::<Value>(p);
        Vm {
            p,
            w,
            pool,
            attacker,
        }
    }

    pub fn initial(&self, regs: &BTreeMap<Reg, i64>) -> State {
        let regs = regs
            .iter()
            .map(|(k, v)| (*k, Value::Num(wrap(*v, self.w))))
            .collect();
        let (_, m) = initial_machine(self.p, &regs);
        State {
            config: Config::Running(m),
            adv: self.attacker.map(|a| a.initial()).unwrap_or_default(),
        }
    }

    fn ctx(&self) -> Ctx<'_> {
        Ctx {
            p: self.p,
            w: self.w,
            pool: &self.pool,
            lib_boundary: false,
        }
    }

    /// Whether `s` has no further transition.
    pub fn is_terminal(&self, s: &State) -> bool {
        matches!(s.config, Config::Returned { .. }) && self.attacker.is_none()
    }

    fn successors(&self, s: &State) -> Succ {
        let done = |o: Outcome, steps: u64, rule: &str, events: Vec<Event>| Step {
            next: Next::Done(o),
            steps,
            rule: rule.into(),
            events,
        };
        let m = match &s.config {
            Config::Running(m) => m,
            Config::Returned { value, .. } => {
                let Some(a) = self.attacker else {
                    return Succ::One(done(Outcome::Value(value.clone()), 0, "final", vec![]));
                };
                let bs = a.respond(&s.adv, &AdvInput::Final);
                return Succ::Branches(
                    bs.into_iter()
                        .map(|b| {
                            let step = match b.response {
                                AdvResponse::Advr(t) => done(
                                    Outcome::Adv(t.clone()),
                                    b.steps + 2,
                                    "AdvFin",
                                    vec![
                                        Event::Final,
                                        Event::In {
                                            response: AdvResponse::Advr(t),
                                        },
                                    ],
                                ),
                                AdvResponse::Value(_) => done(
                                    Outcome::Stuck("AdvFin: response outside ADVR".into()),
                                    0,
                                    "AdvFin",
                                    vec![],
                                ),
                            };
                            (b.prob, step)
                        })
                        .collect(),
                );
            }
        };
        let mut next = m.clone();
        match next.step(&self.ctx()) {
            Transition::Applied(rule) => Succ::One(Step {
                next: Next::State(State {
                    config: Config::Running(next),
                    adv: s.adv.clone(),
                }),
                steps: 1,
                rule: rule.into(),
                events: vec![],
            }),
            Transition::Rand(reg) => Succ::Uniform {
                reg,
                state: s.clone(),
            },
            Transition::Final(value) => Succ::One(Step {
                next: Next::State(State {
                    config: Config::Returned {
                        value,
                        heap: next.heap,
                    },
                    adv: s.adv.clone(),
                }),
                steps: 1,
                rule: "rReturnF".into(),
                events: vec![],
            }),
            Transition::Mal { mid, args } => {
                let Some(a) = self.attacker else {
                    return Succ::One(done(
                        Outcome::Stuck("AdvInv: no attacker".into()),
                        0,
                        "AdvInv",
                        vec![],
                    ));
                };
                let input = AdvInput::Call {
                    mid: mid.clone(),
                    args: args.clone(),
                };
                let out = Event::Out { mid, args };
                Succ::Branches(
                    a.respond(&s.adv, &input)
                        .into_iter()
                        .map(|b| {
                            let events = vec![
                                out.clone(),
                                Event::In {
                                    response: b.response.clone(),
                                },
                            ];
                            let step = match b.response {
                                AdvResponse::Value(v) => {
                                    let mut m = m.clone();
                                    m.resume(v.lo(), v.up());
                                    Step {
                                        next: Next::State(State {
                                            config: Config::Running(m),
                                            adv: b.state,
                                        }),
                                        steps: b.steps + 2,
                                        rule: "AdvInv".into(),
                                        events,
                                    }
                                }
                                AdvResponse::Advr(t) => {
                                    done(Outcome::Adv(t), b.steps + 1, "AdvRet", events)
                                }
                            };
                            (b.prob, step)
                        })
                        .collect(),
                )
            }
            Transition::Lib { .. } => unreachable!("library boundary is off"),
            Transition::Stuck(st) => {
                Succ::One(done(Outcome::Stuck(st.to_string()), 0, &st.rule, vec![]))
            }
        }
    }

    fn rand_step(&self, reg: Reg, state: &State, value: i64) -> Step {
        let Config::Running(m) = &state.config else {
            unreachable!("rand only in running states")
        };
        let mut m = m.clone();
        m.set(reg, Value::Num(value));
        m.advance(1);
        Step {
            next: Next::State(State {
                config: Config::Running(m),
                adv: state.adv.clone(),
            }),
            steps: 1,
            rule: "Prob".into(),
            events: vec![Event::Rand { reg, value }],
        }
    }

    /// One transition, resolving probabilistic choices with `rng`.
    pub fn step(&self, s: &State, rng: &mut Rng) -> Step {
        match self.successors(s) {
            Succ::One(st) => st,
            Succ::Uniform { reg, state } => {
                let v = draw(rng, self.w);
                self.rand_step(reg, &state, v)
            }
            Succ::Branches(bs) => {
                let mut u: f64 = rng.gen();
                let last = bs.len() - 1;
                for (i, (p, st)) in bs.into_iter().enumerate() {
                    let p = num_traits::ToPrimitive::to_f64(&p).unwrap_or(0.0);
                    if u < p || i == last {
                        return st;
                    }
                    u -= p;
                }
                unreachable!("attacker returned no branch")
            }
        }
    }

    /// Iterate `step` until termination or until more than `max_steps` would be spent.
    pub fn run(&self, mut s: State, rng: &mut Rng, max_steps: u64) -> Run {
        let mut trace = Vec::new();
        let mut rules = Vec::new();
        let mut total = 0;
        loop {
            let st = self.step(&s, rng);
            if total + st.steps > max_steps {
                return Run {
                    outcome: Outcome::Timeout,
                    trace,
                    steps: total,
                    rules,
                };
            }
            total += st.steps;
            trace.extend(st.events);
            rules.push(st.rule);
            match st.next {
                Next::State(n) => s = n,
                Next::Done(o) => {
                    return Run {
                        outcome: o,
                        trace,
                        steps: total,
                        rules,
                    }
                }
            }
        }
    }

    /// Exact outcome distribution by enumerating every probabilistic choice.
    pub fn exact_distribution(
        &self,
        s: State,
        max_steps: u64,
    ) -> Result<Dist<BigRational>, DistError> {
        let mut dist = Dist::default();
        let mut stack = vec![(s, BigRational::one(), 0u64)];
        let mut expanded = 0usize;
        while let Some((s, p, total)) = stack.pop() {
            expanded += 1;
            if expanded > MAX_BRANCHES {
                return Err(DistError::Explosion);
            }
            let branches: Vec<(BigRational, Step)> = match self.successors(&s) {
                Succ::One(st) => vec![(BigRational::one(), st)],
                Succ::Uniform { reg, state } => {
                    if self.w > MAX_EXHAUSTIVE_WIDTH {
                        return Err(DistError::Width(self.w));
                    }
                    let n = 1u64 << self.w;
                    crate::ops::all_values(self.w)
                        .map(|v| (ratio(1, n), self.rand_step(reg, &state, v)))
                        .collect()
                }
                Succ::Branches(bs) => bs,
            };
            for (q, st) in branches {
                let q = &p * q;
                if total + st.steps > max_steps {
                    dist.add(Outcome::Timeout, q);
                    continue;
                }
                match st.next {
                    Next::State(n) => stack.push((n, q, total + st.steps)),
                    Next::Done(o) => dist.add(o, q),
                }
            }
        }
        Ok(dist)
    }

    /// Monte-Carlo estimate over `trials` runs seeded `seed + i`.
    pub fn mc_distribution(&self, s: &State, trials: u64, seed: u64, max_steps: u64) -> Dist<f64> {
        let mut counts: BTreeMap<Outcome, u64> = BTreeMap::new();
        for i in 0..trials {
            let mut rng = seeded(seed.wrapping_add(i));
            *counts
                .entry(self.run(s.clone(), &mut rng, max_steps).outcome)
                .or_default() += 1;
        }
        Dist {
            probs: counts
                .into_iter()
                .map(|(k, c)| (k, c as f64 / trials as f64))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::parse;

    fn prog(body: &str) -> Program {
        parse(&format!(
            ".mal static leak/1\n.method static main {{\n{body}\n}}\n"
        ))
        .unwrap()
    }

    #[test]
    fn const_return_takes_two_steps() {
        let p = prog("const v0, 7\nreturn v0");
        let vm = Vm::new(&p, 8, None);
        let r = vm.run(vm.initial(&BTreeMap::new()), &mut seeded(0), 100);
        assert_eq!(r.outcome, Outcome::Value(Value::Num(7)));
        assert_eq!(r.steps, 2);
    }

    #[test]
    fn branch_taken_on_equal_registers() {
        let p = prog("const v0, 1\nconst v1, 1\nif-test v0, v1, 3, eq\nconst v2, 5\nreturn v2\nconst v2, 9\nreturn v2");
        let vm = Vm::new(&p, 8, None);
        let r = vm.run(vm.initial(&BTreeMap::new()), &mut seeded(0), 100);
        assert_eq!(r.outcome, Outcome::Value(Value::Num(9)));
        assert!(r.rules.contains(&"IfTestT".to_string()));
    }

    #[test]
    fn attacker_call_and_final() {
        let p = prog(
            "const v0, 3\ninvoke-static v0, v0, v0, v0, v0, 1, leak\nmove-result v1\nreturn v1",
        );
        let script = Scripted::parse("resp 4 cost 3\nfinal win cost 2\n").unwrap();
        let vm = Vm::new(&p, 8, Some(&script));
        let r = vm.run(vm.initial(&BTreeMap::new()), &mut seeded(0), 100);
        assert_eq!(r.outcome, Outcome::Adv("win".into()));
        // const 1, AdvInv 3+2, move-result 1, rReturnF 1, AdvFin 2+2
        assert_eq!(r.steps, 1 + 5 + 1 + 1 + 4);
        assert_eq!(
            r.trace[0],
            Event::Out {
                mid: "leak".into(),
                args: vec![Value::Num(3)]
            }
        );
    }

    #[test]
    fn adversary_abort_costs_one_extra() {
        let p = prog("invoke-static v0, v0, v0, v0, v0, 1, leak\nreturn-void");
        let script = Scripted::parse("final stop cost 5\n").unwrap();
        let vm = Vm::new(&p, 8, Some(&script));
        let r = vm.run(vm.initial(&BTreeMap::new()), &mut seeded(0), 100);
        assert_eq!((r.outcome, r.steps), (Outcome::Adv("stop".into()), 6));
    }

    #[test]
    fn stuck_and_timeout() {
        let p = prog("const v0, 0\nbinop v1, v0, v0, div\nreturn v1");
        let vm = Vm::new(&p, 8, None);
        let r = vm.run(vm.initial(&BTreeMap::new()), &mut seeded(0), 100);
        assert!(matches!(r.outcome, Outcome::Stuck(ref s) if s.contains("rBinop")));
        let p = prog("goto 0");
        let vm = Vm::new(&p, 8, None);
        assert_eq!(
            vm.run(vm.initial(&BTreeMap::new()), &mut seeded(0), 50)
                .outcome,
            Outcome::Timeout
        );
    }

    #[test]
    fn rand_is_uniform_exactly() {
        let p = prog("rand v0\nreturn v0");
        let vm = Vm::new(&p, 2, None);
        let d = vm
            .exact_distribution(vm.initial(&BTreeMap::new()), 10)
            .unwrap();
        assert_eq!(d.probs.len(), 4);
        assert!(d.probs.values().all(|q| *q == ratio(1, 4)));
        assert!(d.total().is_one());
        let wide = Vm::new(&p, 16, None);
        assert_eq!(
            wide.exact_distribution(wide.initial(&BTreeMap::new()), 10),
            Err(DistError::Width(16))
        );
    }

    #[test]
    fn seeded_runs_repeat() {
        let p = prog("rand v0\nrand v1\nbinop v2, v0, v1, xor\nreturn v2");
        let vm = Vm::new(&p, 4, None);
        let a = vm.run(vm.initial(&BTreeMap::new()), &mut seeded(42), 100);
        let b = vm.run(vm.initial(&BTreeMap::new()), &mut seeded(42), 100);
        assert_eq!(a, b);
    }

    #[test]
    fn objects_arrays_and_calls() {
        let src = ".class C\n.field C.f\n.field static C.s\n\
            .method static main {\n new-instance v0, C\n const v1, 5\n iput v1, v0, C.f\n \
            invoke-direct-range v0, 1, get\n move-result v2\n const v3, 3\n new-array v4, v3\n \
            aput v2, v4, v1\n const v1, 2\n aput v2, v4, v1\n aget v5, v4, v1\n sput v5, C.s\n sget v6, C.s\n \
            array-length v7, v4\n binop v6, v6, v7, add\n return v6\n}\n\
            .method C.get {\n iget v1, v0, C.f\n return v1\n}\n";
        let p = parse(src).unwrap();
        let vm = Vm::new(&p, 8, None);
        let r = vm.run(vm.initial(&BTreeMap::new()), &mut seeded(0), 100);
        // the first aput indexes 5 into a 3-cell array
        assert!(matches!(r.outcome, Outcome::Stuck(ref s) if s.contains("rAput")));
        let fixed = src.replace(" aput v2, v4, v1\n const v1, 2", " const v1, 2");
        let p = parse(&fixed).unwrap();
        let vm = Vm::new(&p, 8, None);
        let r = vm.run(vm.initial(&BTreeMap::new()), &mut seeded(0), 100);
        assert_eq!(r.outcome, Outcome::Value(Value::Num(8)));
    }
}
