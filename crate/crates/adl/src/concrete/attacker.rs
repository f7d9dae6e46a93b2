//! External attackers as probabilistic responders.

use crate::machine::Value;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use serde::{Deserialize, Serialize};
use std::fmt::Debug;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvInput {
    /// A malicious method was called with these arguments.
    Call { mid: String, args: Vec<Value> },
    /// The program finished; the attacker must decide.
    Final,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvResponse {
    Value(Value),
    /// A token in ADVR; ends the execution.
    Advr(String),
}

pub type AdvState = Vec<i64>;

/// One way the attacker may answer: reached with `prob` after `steps` internal steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdvBranch {
    pub prob: BigRational,
    pub state: AdvState,
    pub response: AdvResponse,
    pub steps: u64,
}

/// A probabilistic transition system over (input, state, output), summarized
/// per query as the distribution of its answers.
pub trait Attacker: Send + Sync + Debug {
    fn initial(&self) -> AdvState;
    fn respond(&self, state: &AdvState, input: &AdvInput) -> Vec<AdvBranch>;
}

fn certain(state: AdvState, response: AdvResponse, steps: u64) -> Vec<AdvBranch> {
    vec![AdvBranch {
        prob: BigRational::one(),
        state,
        response,
        steps,
    }]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScriptLine {
    Resp { value: Value, cost: u64 },
    Final { token: String, cost: u64 },
}

/// Replays a transcript of responses in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scripted {
    pub lines: Vec<ScriptLine>,
}

impl Scripted {
    /// Lines `resp <value> cost <k>` or `final <token> cost <k>`; `#` starts a comment.
    pub fn parse(src: &str) -> Result<Scripted, String> {
        let mut lines = Vec::new();
        for (i, raw) in src.lines().enumerate() {
            let text = raw.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let w: Vec<&str> = text.split_whitespace().collect();
            let bad = || format!("line {}: expected `resp|final <x> cost <k>`", i + 1);
            let [kind, x, "cost", k] = w.as_slice() else {
                return Err(bad());
            };
            let cost: u64 = k.parse().map_err(|_| bad())?;
            lines.push(match *kind {
                "resp" => ScriptLine::Resp {
                    value: x.parse()?,
                    cost,
                },
                "final" => ScriptLine::Final {
                    token: x.to_string(),
                    cost,
                },
                _ => return Err(bad()),
            });
        }
        Ok(Scripted { lines })
    }

    pub fn render(&self) -> String {
        self.lines
            .iter()
            .map(|l| match l {
                ScriptLine::Resp { value, cost } => format!("resp {value} cost {cost}\n"),
                ScriptLine::Final { token, cost } => format!("final {token} cost {cost}\n"),
            })
            .collect()
    }
}

impl Attacker for Scripted {
    fn initial(&self) -> AdvState {
        vec![0]
    }

    fn respond(&self, state: &AdvState, _input: &AdvInput) -> Vec<AdvBranch> {
        let i = state[0] as usize;
        let next = vec![state[0] + 1];
        match self.lines.get(i) {
            Some(ScriptLine::Resp { value, cost }) => {
                certain(next, AdvResponse::Value(value.clone()), *cost)
            }
            Some(ScriptLine::Final { token, cost }) => {
                certain(next, AdvResponse::Advr(token.clone()), *cost)
            }
            None => certain(next, AdvResponse::Advr("eof".into()), 1),
        }
    }
}

/// Answers calls with `void` and finally outputs the first argument of the
/// last call, or `none`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Echo;

impl Attacker for Echo {
    fn initial(&self) -> AdvState {
        vec![]
    }

    fn respond(&self, state: &AdvState, input: &AdvInput) -> Vec<AdvBranch> {
        match input {
            AdvInput::Call { args, .. } => {
                let seen = match args.first() {
                    Some(Value::Num(n)) => vec![*n],
                    _ => vec![],
                };
                certain(seen, AdvResponse::Value(Value::Void), 1)
            }
            AdvInput::Final => {
                let tok = state.first().map_or("none".to_string(), |n| n.to_string());
                certain(state.clone(), AdvResponse::Advr(tok), 1)
            }
        }
    }
}

/// Answers calls with `void` and ends with a fair coin `0`/`1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Guess;

impl Attacker for Guess {
    fn initial(&self) -> AdvState {
        vec![]
    }

    fn respond(&self, state: &AdvState, input: &AdvInput) -> Vec<AdvBranch> {
        match input {
            AdvInput::Call { .. } => certain(state.clone(), AdvResponse::Value(Value::Void), 1),
            AdvInput::Final => {
                let half = BigRational::new(BigInt::from(1), BigInt::from(2));
                ["0", "1"]
                    .into_iter()
                    .map(|t| AdvBranch {
                        prob: half.clone(),
                        state: state.clone(),
                        response: AdvResponse::Advr(t.into()),
                        steps: 1,
                    })
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transcript_round_trip() {
        let src = "# attacker\nresp 5 cost 2\nresp @3 cost 1\nfinal 1 cost 4\n";
        let s = Scripted::parse(src).unwrap();
        assert_eq!(s.lines.len(), 3);
        assert_eq!(Scripted::parse(&s.render()).unwrap(), s);
        assert!(Scripted::parse("resp x cost 1").is_err());
    }

    #[test]
    fn echo_reports_last_leak() {
        let st = Echo.initial();
        let call = AdvInput::Call {
            mid: "leak".into(),
            args: vec![Value::Num(1)],
        };
        let b = Echo.respond(&st, &call);
        let f = Echo.respond(&b[0].state, &AdvInput::Final);
        assert_eq!(f[0].response, AdvResponse::Advr("1".into()));
    }
}
