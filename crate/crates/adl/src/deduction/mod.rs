//! Attacker knowledge over views: recipe search, depth-bounded knowledge
//! samples and static equivalence of views.

mod enumerate;

pub use enumerate::{Distinguisher, Enumerator};

use crate::term::{
    Bitstring, NonceKind, SymOp, SymbolId, SymbolKind, SymbolicModel, Term, TermError,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewEvent {
    In {
        term: Term,
        recipe: SymOp,
    },
    /// Output terms; `label` names the operation that emitted them.
    Out {
        #[serde(default, skip_serializing_if = "String::is_empty")]
        label: String,
        terms: Vec<Term>,
    },
    Control {
        out_meta: Bitstring,
        in_meta: Bitstring,
    },
}

impl ViewEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            ViewEvent::In { .. } => "in",
            ViewEvent::Out { .. } => "out",
            ViewEvent::Control { .. } => "control",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct View {
    pub events: Vec<ViewEvent>,
}

impl View {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn outs(terms: Vec<Term>) -> Self {
        View {
            events: terms
                .into_iter()
                .map(|t| ViewEvent::Out {
                    label: String::new(),
                    terms: vec![t],
                })
                .collect(),
        }
    }

    pub fn push(&mut self, e: ViewEvent) {
        self.events.push(e);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Out(V): all output terms in order.
    pub fn out_terms(&self) -> Vec<Term> {
        self.events
            .iter()
            .flat_map(|e| match e {
                ViewEvent::Out { terms, .. } => terms.clone(),
                _ => Vec::new(),
            })
            .collect()
    }

    pub fn out_meta(&self) -> Vec<Bitstring> {
        self.events
            .iter()
            .filter_map(|e| match e {
                ViewEvent::Control { out_meta, .. } => Some(out_meta.clone()),
                _ => None,
            })
            .collect()
    }

    /// In(V): the attacker strategy.
    pub fn in_recipes(&self) -> Vec<SymOp> {
        self.events
            .iter()
            .filter_map(|e| match e {
                ViewEvent::In { recipe, .. } => Some(recipe.clone()),
                _ => None,
            })
            .collect()
    }

    /// Every In event's recipe evaluates on the preceding outputs to its term.
    pub fn is_sound(&self, model: &SymbolicModel) -> bool {
        let mut outs = Vec::new();
        for e in &self.events {
            match e {
                ViewEvent::Out { terms, .. } => outs.extend(terms.iter().cloned()),
                ViewEvent::In { term, recipe } => {
                    if model.eval_op(recipe, &outs).ok().flatten().as_ref() != Some(term) {
                        return false;
                    }
                }
                ViewEvent::Control { .. } => {}
            }
        }
        true
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeductionError {
    #[error("recipe enumeration exceeded {0} entries")]
    BoundExhausted(usize),
    #[error(transparent)]
    Term(#[from] TermError),
}

/// The attacker's recipe alphabet: constructor/destructor symbols and a finite nonce pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecipeSignature {
    pub symbols: Vec<SymbolId>,
    pub nonces: Vec<Term>,
}

pub fn attacker_nonce_pool() -> Vec<Term> {
    vec![Term::attacker_nonce("a"), Term::attacker_nonce("b")]
}

impl RecipeSignature {
    pub fn full(model: &SymbolicModel) -> Self {
        RecipeSignature {
            symbols: model.symbols(),
            nonces: attacker_nonce_pool(),
        }
    }

    pub fn only(model: &SymbolicModel, names: &[&str]) -> Result<Self, TermError> {
        let mut symbols = names
            .iter()
            .map(|n| {
                model
                    .symbol(n)
                    .ok_or_else(|| TermError::UnknownSymbol(n.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        symbols.sort_by(|a, b| a.name.cmp(&b.name));
        symbols.dedup();
        Ok(RecipeSignature {
            symbols,
            nonces: attacker_nonce_pool(),
        })
    }

    pub fn filtered(model: &SymbolicModel, keep: impl Fn(&SymbolId) -> bool) -> Self {
        RecipeSignature {
            symbols: model.symbols().into_iter().filter(|s| keep(s)).collect(),
            nonces: attacker_nonce_pool(),
        }
    }

    /// Recipes of depth 1 for `params` outputs, ordered by rendering.
    pub fn leaves(&self, params: usize) -> Vec<SymOp> {
        let mut v: Vec<SymOp> = (1..=params).map(SymOp::Param).collect();
        v.extend(self.nonces.iter().map(SymOp::from_term));
        v.extend(
            self.symbols
                .iter()
                .filter(|s| s.arity == 0 && s.kind == SymbolKind::Constructor)
                .map(|s| SymOp::App(s.name.clone(), Vec::new())),
        );
        v.sort_by_key(|o| o.to_string());
        v
    }
}

/// Bound on stored entries for every enumeration in this module.
pub const DEFAULT_ENTRY_LIMIT: usize = 2_000_000;

/// Some recipe of depth at most `depth` evaluating to `target` on Out(view),
/// the first in (depth, symbol name, argument order) order.
pub fn deducible(
    model: &SymbolicModel,
    sig: &RecipeSignature,
    view: &View,
    target: &Term,
    depth: usize,
) -> Result<Option<SymOp>, DeductionError> {
    let mut en = Enumerator::new(model, sig, vec![view.out_terms()], DEFAULT_ENTRY_LIMIT);
    let hit = en.find_target(target, depth)?;
    if let Some(r) = &hit {
        debug_assert_eq!(
            model.eval_op(r, &view.out_terms()).ok().flatten().as_ref(),
            Some(target)
        );
    }
    Ok(hit)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSample {
    pub verdicts: BTreeMap<SymOp, bool>,
}

/// Verdicts of every recipe of depth at most `depth`, by plain enumeration.
pub fn knowledge(
    model: &SymbolicModel,
    sig: &RecipeSignature,
    view: &View,
    depth: usize,
    limit: usize,
) -> Result<KnowledgeSample, DeductionError> {
    let outs = view.out_terms();
    let recipes = all_recipes(sig, outs.len(), depth, limit)?;
    let mut verdicts = BTreeMap::new();
    for r in recipes {
        let v = model.eval_checked(&r, &outs).is_some();
        verdicts.insert(r, v);
    }
    Ok(KnowledgeSample { verdicts })
}

/// All recipes of depth at most `depth` over `params` parameters.
pub fn all_recipes(
    sig: &RecipeSignature,
    params: usize,
    depth: usize,
    limit: usize,
) -> Result<Vec<SymOp>, DeductionError> {
    if depth == 0 {
        return Ok(Vec::new());
    }
    let mut all = sig.leaves(params);
    let mut prev_len = 0;
    for _ in 2..=depth {
        let old = all.clone();
        let fresh_from = prev_len;
        prev_len = old.len();
        for s in sig.symbols.iter().filter(|s| s.arity > 0) {
            let mut idx = vec![0usize; s.arity];
            loop {
                if idx.iter().any(|&i| i >= fresh_from) {
                    all.push(SymOp::App(
                        s.name.clone(),
                        idx.iter().map(|&i| old[i].clone()).collect(),
                    ));
                    if all.len() > limit {
                        return Err(DeductionError::BoundExhausted(limit));
                    }
                }
                if !enumerate::next_tuple(&mut idx, old.len()) {
                    break;
                }
            }
        }
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum ViewMismatch {
    Structure {
        index: usize,
    },
    Label {
        index: usize,
    },
    OutMeta,
    Knowledge {
        recipe: SymOp,
        left: bool,
        right: bool,
    },
}

/// `None` when the views are equivalent at the given recipe depth.
pub fn views_equivalent(
    model: &SymbolicModel,
    sig: &RecipeSignature,
    v1: &View,
    v2: &View,
    depth: usize,
) -> Result<Option<ViewMismatch>, DeductionError> {
    if let Some(m) = structural_mismatch(v1, v2) {
        return Ok(Some(m));
    }
    let mut en = Enumerator::new(
        model,
        sig,
        vec![v1.out_terms(), v2.out_terms()],
        DEFAULT_ENTRY_LIMIT,
    );
    Ok(en
        .find_distinguisher(depth)?
        .map(|d| ViewMismatch::Knowledge {
            recipe: d.recipe,
            left: d.verdicts[0],
            right: d.verdicts[1],
        }))
}

/// Conditions (i) and (ii) of view equivalence.
pub fn structural_mismatch(v1: &View, v2: &View) -> Option<ViewMismatch> {
    let n = v1.len().min(v2.len());
    for i in 0..n {
        if v1.events[i].kind() != v2.events[i].kind() {
            return Some(ViewMismatch::Structure { index: i });
        }
    }
    if v1.len() != v2.len() {
        return Some(ViewMismatch::Structure { index: n });
    }
    for (i, (a, b)) in v1.events.iter().zip(&v2.events).enumerate() {
        if let (ViewEvent::Out { label: x, .. }, ViewEvent::Out { label: y, .. }) = (a, b) {
            if x != y {
                return Some(ViewMismatch::Label { index: i });
            }
        }
    }
    if v1.out_meta() != v2.out_meta() {
        return Some(ViewMismatch::OutMeta);
    }
    None
}

/// Equivalence by comparing full knowledge samples; exponential, for small cases.
pub fn views_equivalent_naive(
    model: &SymbolicModel,
    sig: &RecipeSignature,
    v1: &View,
    v2: &View,
    depth: usize,
    limit: usize,
) -> Result<Option<ViewMismatch>, DeductionError> {
    if let Some(m) = structural_mismatch(v1, v2) {
        return Ok(Some(m));
    }
    let (o1, o2) = (v1.out_terms(), v2.out_terms());
    let params = o1.len().max(o2.len());
    for r in all_recipes(sig, params, depth, limit)? {
        let a = model.eval_checked(&r, &o1).is_some();
        let b = model.eval_checked(&r, &o2).is_some();
        if a != b {
            return Ok(Some(ViewMismatch::Knowledge {
                recipe: r,
                left: a,
                right: b,
            }));
        }
    }
    Ok(None)
}

/// Distinct values deducible at depth at most `depth` in every view at once,
/// each with its first recipe.
pub fn joint_choices(
    model: &SymbolicModel,
    sig: &RecipeSignature,
    outs: Vec<Vec<Term>>,
    depth: usize,
) -> Result<Vec<(SymOp, Vec<Term>)>, DeductionError> {
    let mut en = Enumerator::new(model, sig, outs, DEFAULT_ENTRY_LIMIT);
    en.expand_full(depth)?;
    Ok(en.entries())
}

pub fn is_attacker_nonce(t: &Term) -> bool {
    matches!(t, Term::Nonce(_, NonceKind::Attacker))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::iota_encode;

    fn t(s: &str) -> Term {
        s.parse().unwrap()
    }

    fn core() -> SymbolicModel {
        SymbolicModel::core(2)
    }

    #[test]
    fn identity_and_projection_recipes() {
        let m = core();
        let sig = RecipeSignature::full(&m);
        let v = View::outs(vec![t("pair(n!a,n!b)")]);
        assert_eq!(
            deducible(&m, &sig, &v, &t("pair(n!a,n!b)"), 3)
                .unwrap()
                .unwrap()
                .to_string(),
            "x_1"
        );
        assert_eq!(
            deducible(&m, &sig, &v, &t("n!a"), 3)
                .unwrap()
                .unwrap()
                .to_string(),
            "fst(x_1)"
        );
        assert_eq!(deducible(&m, &sig, &v, &t("n!c"), 3).unwrap(), None);
    }

    #[test]
    fn free_encryption_hides_plaintext() {
        let m = crate::term::combine_models(
            &core(),
            &SymbolicModel::new().with_constructor("enc", 2).unwrap(),
        )
        .unwrap();
        let sig = RecipeSignature::full(&m);
        let v = View::outs(vec![t("enc(n!k,n!m)")]);
        assert_eq!(deducible(&m, &sig, &v, &t("n!m"), 3).unwrap(), None);
        let w = View::outs(vec![t("n!k"), t("n!m")]);
        assert_eq!(
            deducible(&m, &sig, &w, &t("enc(n!k,n!m)"), 2)
                .unwrap()
                .unwrap()
                .to_string(),
            "enc(x_1,x_2)"
        );
    }

    #[test]
    fn knowledge_examples() {
        let m = core();
        let sig = RecipeSignature::full(&m);
        let k = knowledge(&m, &sig, &View::new(), 2, 100_000).unwrap();
        assert!(k.verdicts.keys().all(|r| r.arity() == 0));
        assert!(k.verdicts[&SymOp::parse("equals(n?a,n?a)").unwrap()]);
        let one = View::outs(vec![iota_encode(&"1".parse().unwrap())]);
        let k = knowledge(&m, &sig, &one, 2, 100_000).unwrap();
        assert!(k.verdicts[&SymOp::parse("unstring_1(x_1)").unwrap()]);
        assert!(!k.verdicts[&SymOp::parse("unstring_0(x_1)").unwrap()]);
        assert_eq!(k, knowledge(&m, &sig, &one, 2, 100_000).unwrap());
    }

    #[test]
    fn bit_views_are_distinguished() {
        let m = core();
        let sig = RecipeSignature::full(&m);
        let a = View::outs(vec![iota_encode(&"0".parse().unwrap())]);
        let b = View::outs(vec![iota_encode(&"1".parse().unwrap())]);
        let r = views_equivalent(&m, &sig, &a, &b, 3).unwrap();
        assert_eq!(
            r,
            Some(ViewMismatch::Knowledge {
                recipe: SymOp::parse("unstring_0(x_1)").unwrap(),
                left: true,
                right: false
            })
        );
        assert_eq!(views_equivalent(&m, &sig, &a, &a, 3).unwrap(), None);
    }

    #[test]
    fn structure_and_meta_checked_first() {
        let m = core();
        let sig = RecipeSignature::full(&m);
        let a = View::outs(vec![t("emp")]);
        let b = View::new();
        assert_eq!(
            views_equivalent(&m, &sig, &a, &b, 2).unwrap(),
            Some(ViewMismatch::Structure { index: 0 })
        );
        let c = View {
            events: vec![ViewEvent::Control {
                out_meta: "0".parse().unwrap(),
                in_meta: "".parse().unwrap(),
            }],
        };
        let d = View {
            events: vec![ViewEvent::Control {
                out_meta: "1".parse().unwrap(),
                in_meta: "".parse().unwrap(),
            }],
        };
        assert_eq!(
            views_equivalent(&m, &sig, &c, &d, 2).unwrap(),
            Some(ViewMismatch::OutMeta)
        );
    }

    #[test]
    fn view_json_round_trip() {
        let v = View {
            events: vec![
                ViewEvent::Out {
                    label: String::new(),
                    terms: vec![t("pair(emp,n!k)")],
                },
                ViewEvent::In {
                    term: t("emp"),
                    recipe: SymOp::parse("fst(x_1)").unwrap(),
                },
            ],
        };
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(
            s,
            r#"[{"out":{"terms":["pair(emp,n!k)"]}},{"in":{"term":"emp","recipe":"fst(x_1)"}}]"#
        );
        assert_eq!(serde_json::from_str::<View>(&s).unwrap(), v);
        assert!(v.is_sound(&core()));
    }

    #[test]
    fn recipe_counts() {
        let m = SymbolicModel::new()
            .with_constructor("c", 0)
            .unwrap()
            .with_constructor("f", 1)
            .unwrap()
            .with_constructor("g", 2)
            .unwrap();
        let sig = RecipeSignature {
            symbols: m.symbols(),
            nonces: vec![],
        };
        assert_eq!(all_recipes(&sig, 0, 1, 100).unwrap().len(), 1);
        assert_eq!(all_recipes(&sig, 0, 2, 100).unwrap().len(), 3);
        assert_eq!(all_recipes(&sig, 0, 3, 100).unwrap().len(), 1 + 2 + 10);
    }
}
