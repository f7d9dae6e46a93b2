//! Bounded symbolic trace equivalence of two programs and Monte-Carlo
//! estimates of the computational distinguishing advantage.

use crate::bytecode::{Program, Reg};
use crate::concrete::{seeded, Attacker, Vm};
use crate::deduction::{
    all_recipes, joint_choices, structural_mismatch, views_equivalent, views_equivalent_naive,
    DeductionError, View, ViewMismatch,
};
use crate::prob::Outcome;
use crate::symbolic::{canonical_choice, Choice, Pending, SymError, SymState, SymVm};
use crate::term::{SymOp, Term};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Lockstep nodes explored before giving up.
pub const MAX_NODES: usize = 100_000;

/// One adversary move, applied to both programs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "move", rename_all = "lowercase")]
pub enum Move {
    /// Answer a query with the value of a recipe over the outputs so far.
    Recipe { recipe: SymOp },
    /// Resolve a symbolic test: `true` takes the branch.
    Branch { taken: bool },
    /// Resolve a comparison with -1, 0 or 1.
    Cmp { value: i8 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub moves: Vec<Move>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    /// Adversary queries answered per execution.
    pub interactions: usize,
    pub recipe_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub strategy: Strategy,
    pub mismatch: ViewMismatch,
    pub views: [View; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    /// No strategy within the budgets tells the programs apart, and none was cut short.
    Equivalent {
        budgets: Budgets,
        strategies: usize,
    },
    Inequivalent {
        budgets: Budgets,
        witness: Witness,
    },
    /// No distinguishing strategy found, but some executions hit a budget.
    BoundExhausted {
        budgets: Budgets,
        strategies: usize,
        truncated: usize,
    },
}

impl Verdict {
    pub fn is_inequivalent(&self) -> bool {
        matches!(self, Verdict::Inequivalent { .. })
    }

    pub fn witness(&self) -> Option<&Witness> {
        match self {
            Verdict::Inequivalent { witness, .. } => Some(witness),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EquivError {
    #[error("the programs use different symbolic models")]
    ModelMismatch,
    #[error("more than {0} lockstep nodes")]
    Explosion(usize),
    #[error("queries of different kinds at the same point")]
    PendingMismatch,
    #[error(transparent)]
    Sym(#[from] SymError),
    #[error(transparent)]
    Deduction(#[from] DeductionError),
}

fn check_models(a: &SymVm<'_>, b: &SymVm<'_>) -> Result<(), EquivError> {
    if a.model.symbols() != b.model.symbols() || a.depth != b.depth {
        return Err(EquivError::ModelMismatch);
    }
    Ok(())
}

/// The choice a move denotes on one side; unread answers are canonical.
fn side_choice(vm: &SymVm<'_>, s: &SymState, m: &Move) -> Result<Choice, EquivError> {
    Ok(match m {
        Move::Branch { taken } => Choice::Index(if *taken { 0 } else { 1 }),
        Move::Cmp { value } => Choice::Index((*value + 1) as u8),
        Move::Recipe { .. } if vm.response_unused(s) => canonical_choice(),
        Move::Recipe { recipe } => {
            let term = vm
                .model
                .eval_checked(recipe, &s.view.out_terms())
                .ok_or_else(|| SymError::InvalidChoice(format!("{recipe} is undefined")))?;
            Choice::Term {
                term,
                recipe: recipe.clone(),
            }
        }
    })
}

/// Outcome of comparing the two executions at a lockstep point.
enum Point {
    Mismatch(ViewMismatch),
    Leaf { truncated: bool },
    Moves(Vec<Move>),
}

fn at_point(
    vm1: &SymVm<'_>,
    vm2: &SymVm<'_>,
    a: &SymState,
    b: &SymState,
    budget: usize,
) -> Result<Point, EquivError> {
    if let Some(m) = views_equivalent(&vm1.model, &vm1.sig, &a.view, &b.view, vm1.depth)? {
        return Ok(Point::Mismatch(m));
    }
    let waiting = |s: &SymState| s.pending.is_some() && s.interactions() <= budget;
    match (a.is_terminal(), b.is_terminal()) {
        (true, true) => return Ok(Point::Leaf { truncated: false }),
        (true, false) | (false, true) => {
            let (t, o) = if a.is_terminal() { (a, b) } else { (b, a) };
            if waiting(o) {
                // The running side will answer and grow past the finished one.
                return Ok(Point::Mismatch(ViewMismatch::Structure {
                    index: t.view.len().min(o.view.len()),
                }));
            }
            return Ok(Point::Leaf { truncated: true });
        }
        (false, false) => {}
    }
    if !waiting(a) || !waiting(b) {
        return Ok(Point::Leaf { truncated: true });
    }
    let moves = match (a.pending.as_ref(), b.pending.as_ref()) {
        (Some(Pending::Branch { .. }), Some(Pending::Branch { .. })) => {
            vec![Move::Branch { taken: true }, Move::Branch { taken: false }]
        }
        (Some(Pending::Cmp { .. }), Some(Pending::Cmp { .. })) => {
            (-1..=1).map(|value| Move::Cmp { value }).collect()
        }
        (Some(Pending::Result(_)), Some(Pending::Result(_))) => {
            if vm1.response_unused(a) && vm2.response_unused(b) {
                vec![Move::Recipe {
                    recipe: SymOp::constant("emp"),
                }]
            } else {
                joint_choices(
                    &vm1.model,
                    &vm1.sig,
                    vec![a.view.out_terms(), b.view.out_terms()],
                    vm1.depth,
                )?
                .into_iter()
                .map(|(recipe, _)| Move::Recipe { recipe })
                .collect()
            }
        }
        _ => return Err(EquivError::PendingMismatch),
    };
    Ok(Point::Moves(moves))
}

/// Bounded trace equivalence: explores joint strategies depth first in
/// canonical order and reports the first one whose views differ.
pub fn sym_equiv(vm1: &SymVm<'_>, vm2: &SymVm<'_>, budget: usize) -> Result<Verdict, EquivError> {
    check_models(vm1, vm2)?;
    let budgets = Budgets {
        interactions: budget,
        recipe_depth: vm1.depth,
    };
    let mut stack = vec![(vm1.initial(), vm2.initial(), Strategy::default())];
    let (mut nodes, mut leaves, mut truncated) = (0, 0, 0);
    while let Some((s1, s2, strat)) = stack.pop() {
        nodes += 1;
        if nodes > MAX_NODES {
            return Err(EquivError::Explosion(MAX_NODES));
        }
        let a = vm1.advance(&s1, &mut Vec::new())?;
        let b = vm2.advance(&s2, &mut Vec::new())?;
        match at_point(vm1, vm2, &a, &b, budget)? {
            Point::Mismatch(mismatch) => {
                return Ok(Verdict::Inequivalent {
                    budgets,
                    witness: Witness {
                        strategy: strat,
                        mismatch,
                        views: [a.view, b.view],
                    },
                })
            }
            Point::Leaf { truncated: t } => {
                leaves += 1;
                truncated += t as usize;
            }
            Point::Moves(ms) => {
                for m in ms.into_iter().rev() {
                    let c1 = side_choice(vm1, &a, &m)?;
                    let c2 = side_choice(vm2, &b, &m)?;
                    let n1 = vm1.step(&a, Some(&c1))?.next;
                    let n2 = vm2.step(&b, Some(&c2))?.next;
                    let mut s = strat.clone();
                    s.moves.push(m);
                    stack.push((n1, n2, s));
                }
            }
        }
    }
    Ok(if truncated == 0 {
        Verdict::Equivalent {
            budgets,
            strategies: leaves,
        }
    } else {
        Verdict::BoundExhausted {
            budgets,
            strategies: leaves,
            truncated,
        }
    })
}

/// Replay a strategy on both programs and recompute the failing condition.
pub fn replay_witness(
    vm1: &SymVm<'_>,
    vm2: &SymVm<'_>,
    strategy: &Strategy,
    budget: usize,
) -> Result<Option<(ViewMismatch, [View; 2])>, EquivError> {
    let mut a = vm1.advance(&vm1.initial(), &mut Vec::new())?;
    let mut b = vm2.advance(&vm2.initial(), &mut Vec::new())?;
    for m in &strategy.moves {
        let c1 = side_choice(vm1, &a, m)?;
        let c2 = side_choice(vm2, &b, m)?;
        a = vm1.advance(&vm1.step(&a, Some(&c1))?.next, &mut Vec::new())?;
        b = vm2.advance(&vm2.step(&b, Some(&c2))?.next, &mut Vec::new())?;
    }
    Ok(match at_point(vm1, vm2, &a, &b, budget)? {
        Point::Mismatch(m) => Some((m, [a.view, b.view])),
        _ => None,
    })
}

/// `∀a ∈ A ∃b ∈ B. a ~ b` and vice versa, each pair decided by `eq`.
pub fn view_sets_equivalent<E>(
    left: &[View],
    right: &[View],
    mut eq: impl FnMut(&View, &View) -> Result<bool, E>,
) -> Result<bool, E> {
    let mut rel = vec![vec![false; right.len()]; left.len()];
    for (i, a) in left.iter().enumerate() {
        for (j, b) in right.iter().enumerate() {
            rel[i][j] = eq(a, b)?;
        }
    }
    let covers_left = rel.iter().all(|row| row.iter().any(|x| *x));
    let covers_right = (0..right.len()).all(|j| rel.iter().any(|row| row[j]));
    Ok(covers_left && covers_right)
}

/// Cap on recipes per slot in the brute-force oracle.
pub const ORACLE_RECIPE_LIMIT: usize = 200_000;

/// Reference procedure: quantifies over every recipe of the depth bound at
/// every query (no shortcut for unread answers), collects each side's views
/// per strategy and compares the view sets with exhaustive knowledge
/// comparison. Answers are merged only when they denote the same terms on
/// both sides, and knowledge comparisons are cached per pair of output
/// sequences. Returns whether the programs are equivalent within the budgets.
pub fn brute_force_equiv(
    vm1: &SymVm<'_>,
    vm2: &SymVm<'_>,
    budget: usize,
) -> Result<bool, EquivError> {
    check_models(vm1, vm2)?;
    let mut recipes: BTreeMap<usize, Vec<SymOp>> = BTreeMap::new();
    let mut known: BTreeMap<(Vec<Term>, Vec<Term>), bool> = BTreeMap::new();
    let mut stack = vec![(vm1.initial(), vm2.initial())];
    let mut nodes = 0;
    while let Some((s1, s2)) = stack.pop() {
        nodes += 1;
        if nodes > 10 * MAX_NODES {
            return Err(EquivError::Explosion(10 * MAX_NODES));
        }
        let a = vm1.advance(&s1, &mut Vec::new())?;
        let b = vm2.advance(&s2, &mut Vec::new())?;
        let live = |s: &SymState| s.pending.is_some() && s.interactions() <= budget;
        if !(live(&a) && live(&b)) || structural_mismatch(&a.view, &b.view).is_some() {
            // Strategies part here: finish each side alone and compare the sets.
            let va = solo_views(vm1, &a, budget, &mut recipes)?;
            let vb = solo_views(vm2, &b, budget, &mut recipes)?;
            let eq = view_sets_equivalent(&va, &vb, |x, y| {
                if structural_mismatch(x, y).is_some() {
                    return Ok::<_, EquivError>(false);
                }
                let key = (x.out_terms(), y.out_terms());
                if key.0 == key.1 {
                    return Ok(true);
                }
                if let Some(k) = known.get(&key) {
                    return Ok(*k);
                }
                let k = views_equivalent_naive(
                    &vm1.model,
                    &vm1.sig,
                    x,
                    y,
                    vm1.depth,
                    ORACLE_RECIPE_LIMIT,
                )?
                .is_none();
                known.insert(key, k);
                Ok(k)
            })?;
            if !eq {
                return Ok(false);
            }
            continue;
        }
        let joint: Vec<Choice> = match (a.pending.as_ref(), b.pending.as_ref()) {
            (Some(Pending::Branch { .. }), Some(Pending::Branch { .. })) => {
                (0..2).map(Choice::Index).collect()
            }
            (Some(Pending::Cmp { .. }), Some(Pending::Cmp { .. })) => {
                (0..3).map(Choice::Index).collect()
            }
            (Some(Pending::Result(_)), Some(Pending::Result(_))) => {
                let (oa, ob) = (a.view.out_terms(), b.view.out_terms());
                let rs = slot_recipes(vm1, oa.len().max(ob.len()), &mut recipes)?;
                let mut pairs = Vec::new();
                let mut seen = BTreeSet::new();
                for r in rs {
                    let ta = vm1.model.eval_checked(&r, &oa);
                    let tb = vm2.model.eval_checked(&r, &ob);
                    match (ta, tb) {
                        (Some(ta), Some(tb)) => {
                            if seen.insert((ta.clone(), tb.clone())) {
                                pairs.push((r, ta, tb));
                            }
                        }
                        (None, None) => {}
                        // Usable on one side only: the other side has no view for this strategy.
                        _ => return Ok(false),
                    }
                }
                for (r, ta, tb) in pairs.into_iter().rev() {
                    let ca = Choice::Term {
                        term: ta,
                        recipe: r.clone(),
                    };
                    let cb = Choice::Term {
                        term: tb,
                        recipe: r,
                    };
                    stack.push((vm1.step(&a, Some(&ca))?.next, vm2.step(&b, Some(&cb))?.next));
                }
                continue;
            }
            _ => return Ok(false),
        };
        for c in joint.into_iter().rev() {
            stack.push((vm1.step(&a, Some(&c))?.next, vm2.step(&b, Some(&c))?.next));
        }
    }
    Ok(true)
}

fn slot_recipes(
    vm: &SymVm<'_>,
    params: usize,
    cache: &mut BTreeMap<usize, Vec<SymOp>>,
) -> Result<Vec<SymOp>, EquivError> {
    if let Some(v) = cache.get(&params) {
        return Ok(v.clone());
    }
    let v = all_recipes(&vm.sig, params, vm.depth, ORACLE_RECIPE_LIMIT)?;
    cache.insert(params, v.clone());
    Ok(v)
}

/// Every view one program reaches from `s` under any continuation.
fn solo_views(
    vm: &SymVm<'_>,
    s: &SymState,
    budget: usize,
    cache: &mut BTreeMap<usize, Vec<SymOp>>,
) -> Result<Vec<View>, EquivError> {
    let mut out = Vec::new();
    let mut stack = vec![s.clone()];
    while let Some(s) = stack.pop() {
        let a = vm.advance(&s, &mut Vec::new())?;
        if a.pending.is_none() || a.interactions() > budget {
            out.push(a.view);
            continue;
        }
        let cs: Vec<Choice> = match &a.pending {
            Some(Pending::Branch { .. }) => (0..2).map(Choice::Index).collect(),
            Some(Pending::Cmp { .. }) => (0..3).map(Choice::Index).collect(),
            _ => {
                let outs = a.view.out_terms();
                let mut seen: BTreeMap<Term, SymOp> = BTreeMap::new();
                for r in slot_recipes(vm, outs.len(), cache)? {
                    if let Some(t) = vm.model.eval_checked(&r, &outs) {
                        seen.entry(t).or_insert(r);
                    }
                }
                seen.into_iter()
                    .map(|(term, recipe)| Choice::Term { term, recipe })
                    .collect()
            }
        };
        for c in cs {
            stack.push(vm.step(&a, Some(&c))?.next);
        }
        if out.len() + stack.len() > MAX_NODES {
            return Err(EquivError::Explosion(MAX_NODES));
        }
    }
    Ok(out)
}

/// Wilson score interval for `k` successes out of `n` at normal quantile `z`.
pub fn wilson(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (all, none) = (k == n, k == 0);
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if none { 0.0 } else { (centre - half).max(0.0) };
    let hi = if all { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TicEstimate {
    /// `max over a ≠ b of Pr₁[a] + Pr₂[b] - 1`.
    pub advantage: f64,
    pub ci: (f64, f64),
    pub confidence: f64,
    /// Tokens for the maximising pair.
    pub pair: (String, String),
    pub trials: u64,
    /// Outcome counts of each program.
    pub counts: [BTreeMap<String, u64>; 2],
}

pub struct TicConfig {
    pub trials: u64,
    pub step_budget: u64,
    pub seed: u64,
    pub jobs: usize,
    pub confidence: f64,
}

impl Default for TicConfig {
    fn default() -> Self {
        TicConfig {
            trials: 10_000,
            step_budget: 10_000,
            seed: 0,
            jobs: 1,
            confidence: 0.99,
        }
    }
}

fn outcome_key(o: &Outcome) -> String {
    match o {
        Outcome::Adv(t) => t.clone(),
        Outcome::Timeout => "⊥timeout".into(),
        Outcome::Value(v) => format!("⊥value {v}"),
        Outcome::Stuck(_) => "⊥stuck".into(),
    }
}

fn sample_counts(
    p: &Program,
    w: u32,
    regs: &BTreeMap<Reg, i64>,
    attacker: &dyn Attacker,
    cfg: &TicConfig,
    salt: u64,
) -> BTreeMap<String, u64> {
    let vm = Vm::new(p, w, Some(attacker));
    let s0 = vm.initial(regs);
    let run_range = |from: u64, to: u64| {
        let mut c: BTreeMap<String, u64> = BTreeMap::new();
        for i in from..to {
            let mut rng =
                seeded(cfg.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i));
            let r = vm.run(s0.clone(), &mut rng, cfg.step_budget);
            *c.entry(outcome_key(&r.outcome)).or_default() += 1;
        }
        c
    };
    let jobs = cfg.jobs.max(1) as u64;
    if jobs == 1 {
        return run_range(0, cfg.trials);
    }
    let chunk = cfg.trials.div_ceil(jobs);
    let parts: Vec<BTreeMap<String, u64>> = std::thread::scope(|sc| {
        let hs: Vec<_> = (0..jobs)
            .map(|j| {
                let f = &run_range;
                let (a, b) = (
                    (j * chunk).min(cfg.trials),
                    ((j + 1) * chunk).min(cfg.trials),
                );
                sc.spawn(move || f(a, b))
            })
            .collect();
        hs.into_iter()
            .map(|h| h.join().expect("trial worker"))
            .collect()
    });
    let mut total = BTreeMap::new();
    for part in parts {
        for (k, v) in part {
            *total.entry(k).or_default() += v;
        }
    }
    total
}

/// Monte-Carlo estimate of the distinguishing advantage of `attacker`
/// between two programs, with per-probability Wilson intervals combined
/// into an interval for the advantage.
pub fn tic_estimate(
    (p1, s1): (&Program, &BTreeMap<Reg, i64>),
    (p2, s2): (&Program, &BTreeMap<Reg, i64>),
    w: u32,
    attacker: &dyn Attacker,
    cfg: &TicConfig,
) -> TicEstimate {
    let c1 = sample_counts(p1, w, s1, attacker, cfg, 1);
    let c2 = sample_counts(p2, w, s2, attacker, cfg, 2);
    let n = cfg.trials;
    // Two intervals per estimate: split the error probability between them.
    let alpha = (1.0 - cfg.confidence) / 2.0;
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - alpha / 2.0);
    let bits = ["0", "1"];
    let mut best: Option<TicEstimate> = None;
    for a in bits {
        for b in bits.iter().filter(|b| **b != a) {
            let k1 = c1.get(a).copied().unwrap_or(0);
            let k2 = c2.get(*b).copied().unwrap_or(0);
            let adv = (k1 as f64 + k2 as f64) / n.max(1) as f64 - 1.0;
            let (l1, h1) = wilson(k1, n, z);
            let (l2, h2) = wilson(k2, n, z);
            let est = TicEstimate {
                advantage: adv,
                ci: (l1 + l2 - 1.0, h1 + h2 - 1.0),
                confidence: cfg.confidence,
                pair: (a.to_string(), b.to_string()),
                trials: n,
                counts: [c1.clone(), c2.clone()],
            };
            if best.as_ref().is_none_or(|x| est.advantage > x.advantage) {
                best = Some(est);
            }
        }
    }
    best.expect("two candidate pairs")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::parse;
    use crate::concrete::{Echo, Guess};
    use crate::symbolic::SymValue;

    const W: u32 = 4;

    fn vm<'p>(p: &'p Program, regs: &[(Reg, SymValue)], depth: usize) -> SymVm<'p> {
        SymVm::new(p, W, &regs.iter().cloned().collect(), depth).unwrap()
    }

    const LEAK: &str = ".mal static leak/1\n.method static main {\n \
        invoke-static v0, v0, v0, v0, v0, 1, leak\n return-void\n}\n";

    #[test]
    fn a_program_is_equivalent_to_itself() {
        let p = parse(LEAK).unwrap();
        let a = vm(&p, &[(0, SymValue::Num(3))], 2);
        let b = vm(&p, &[(0, SymValue::Num(3))], 2);
        let v = sym_equiv(&a, &b, 2).unwrap();
        assert!(
            matches!(v, Verdict::Equivalent { strategies: 1, .. }),
            "{v:?}"
        );
        assert!(brute_force_equiv(&a, &b, 2).unwrap());
    }

    #[test]
    fn leaked_secrets_are_told_apart() {
        let p = parse(LEAK).unwrap();
        let a = vm(&p, &[(0, SymValue::Num(0))], 3);
        let b = vm(&p, &[(0, SymValue::Num(1))], 3);
        let v = sym_equiv(&a, &b, 2).unwrap();
        let w = v.witness().unwrap().clone();
        assert!(w.strategy.moves.is_empty());
        let ViewMismatch::Knowledge { recipe, .. } = &w.mismatch else {
            panic!("{w:?}")
        };
        let outs = |n: i64| vec![crate::term::iota_encode(&crate::ops::num_to_bits(n, W))];
        assert_ne!(
            a.model.eval_checked(recipe, &outs(0)).is_some(),
            b.model.eval_checked(recipe, &outs(1)).is_some()
        );
        let (m, _) = replay_witness(&a, &b, &w.strategy, 2).unwrap().unwrap();
        assert_eq!(m, w.mismatch);
        assert!(!brute_force_equiv(&a, &b, 2).unwrap());
    }

    const ASK: &str = ".mal static ask/1\n.mal static leak/1\n.method static main {\n \
        invoke-static v0, v0, v0, v0, v0, 1, ask\n move-result v1\n \
        if-test v1, v0, 2, eq\n invoke-static v2, v2, v2, v2, v2, 1, leak\n return-void\n}\n";

    #[test]
    fn branches_on_adversary_answers_are_explored() {
        let p = parse(ASK).unwrap();
        let a = vm(&p, &[(0, SymValue::Num(0)), (2, SymValue::Num(5))], 2);
        let b = vm(&p, &[(0, SymValue::Num(0)), (2, SymValue::Num(5))], 2);
        let v = sym_equiv(&a, &b, 3).unwrap();
        assert!(matches!(v, Verdict::Equivalent { .. }), "{v:?}");
        let c = vm(&p, &[(0, SymValue::Num(0)), (2, SymValue::Num(13))], 2);
        let v = sym_equiv(&a, &c, 3).unwrap();
        let w = v.witness().unwrap();
        assert!(
            w.strategy.moves.contains(&Move::Branch { taken: false }),
            "{w:?}"
        );
        assert!(replay_witness(&a, &c, &w.strategy, 3).unwrap().is_some());
        assert!(brute_force_equiv(&a, &b, 2).unwrap());
        assert!(!brute_force_equiv(&a, &c, 2).unwrap());
    }

    #[test]
    fn small_budgets_are_reported() {
        let p = parse(ASK).unwrap();
        let a = vm(&p, &[(0, SymValue::Num(0)), (2, SymValue::Num(5))], 2);
        let v = sym_equiv(&a, &a, 0).unwrap();
        assert!(
            matches!(v, Verdict::BoundExhausted { truncated: 1, .. }),
            "{v:?}"
        );
        let json = serde_json::to_value(&v).unwrap();
        assert_eq!(json["verdict"], "bound_exhausted");
        assert_eq!(json["budgets"]["interactions"], 0);
    }

    #[test]
    fn finishing_early_is_a_structural_difference() {
        let p = parse(LEAK).unwrap();
        let q = parse(&LEAK.replace(
            "return-void",
            "invoke-static v0, v0, v0, v0, v0, 1, leak\n return-void",
        ))
        .unwrap();
        let a = vm(&p, &[(0, SymValue::Num(3))], 2);
        let b = vm(&q, &[(0, SymValue::Num(3))], 2);
        let v = sym_equiv(&a, &b, 2).unwrap();
        assert!(matches!(
            v.witness().unwrap().mismatch,
            ViewMismatch::Structure { .. } | ViewMismatch::Label { .. }
        ));
        assert!(!brute_force_equiv(&a, &b, 2).unwrap());
    }

    #[test]
    fn view_sets_need_matches_both_ways() {
        let v = |n: usize| View {
            events: vec![crate::deduction::ViewEvent::Out {
                label: String::new(),
                terms: vec![Term::constant("emp"); n],
            }],
        };
        let same = |a: &View, b: &View| Ok::<_, ()>(a == b);
        assert!(view_sets_equivalent(&[v(1), v(2)], &[v(2), v(1), v(1)], same).unwrap());
        assert!(!view_sets_equivalent(&[v(1), v(2)], &[v(1)], same).unwrap());
        assert!(!view_sets_equivalent(&[v(1)], &[v(1), v(3)], same).unwrap());
        assert!(view_sets_equivalent(&[], &[], same).unwrap());
    }

    #[test]
    fn wilson_intervals() {
        let z = 1.959_963_984_540_054;
        let (l, h) = wilson(0, 10, z);
        assert_eq!(l, 0.0);
        assert!((h - 0.277_532).abs() < 1e-5);
        let (l, h) = wilson(5, 10, z);
        assert!((l - 0.236_593).abs() < 1e-5 && (h - 0.763_407).abs() < 1e-5);
        assert_eq!(wilson(10, 10, z).1, 1.0);
        assert!((wilson(10, 10, z).0 - 0.722_468).abs() < 1e-5);
    }

    const SECRET: &str = ".mal static leak/1\n.method static main {\n \
        invoke-static v0, v0, v0, v0, v0, 1, leak\n return-void\n}\n";

    #[test]
    fn tic_estimates_are_deterministic_and_job_independent() {
        let p = parse(SECRET).unwrap();
        let s0 = BTreeMap::from([(0, 0)]);
        let s1 = BTreeMap::from([(0, 1)]);
        let mut cfg = TicConfig {
            trials: 200,
            ..TicConfig::default()
        };
        let e = tic_estimate((&p, &s0), (&p, &s1), W, &Echo, &cfg);
        assert_eq!(e.advantage, 1.0);
        assert!(e.ci.0 <= 1.0 && e.ci.1 >= 1.0 - 1e-12);
        let g1 = tic_estimate((&p, &s0), (&p, &s0), W, &Guess, &cfg);
        cfg.jobs = 3;
        let g3 = tic_estimate((&p, &s0), (&p, &s0), W, &Guess, &cfg);
        assert_eq!(g1, g3);
        assert!(g1.ci.0 <= 0.0 && 0.0 <= g1.ci.1, "{g1:?}");
    }
}
