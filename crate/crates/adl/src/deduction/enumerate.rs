//! Level-wise recipe enumeration over one or more views at once.
//!
//! Level `L` holds recipes of depth `L` (a leaf has depth 1). Recipes are
//! deduplicated by their tuple of values across all views, keeping the first
//! one found. Within a level, candidates are visited by symbol name and then
//! by argument tuple in lexicographic entry order.
//!
//! Against two views, a recipe that is ⊥ in one and defined in the other
//! distinguishes them. A minimal such recipe has a destructor at its root,
//! so the last level only needs destructors. `equals` never produces a new
//! value; its distinguishing instances are found by grouping entries that
//! collide in one view.

use super::{DeductionError, RecipeSignature};
use crate::term::{Name, SymOp, SymbolId, SymbolKind, SymbolicModel, Term};
use std::collections::HashMap;

pub(crate) fn next_tuple(idx: &mut [usize], base: usize) -> bool {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < base {
            return true;
        }
        idx[k] = 0;
    }
    false
}

fn next_tuple_in(idx: &mut [usize], lens: &[usize]) -> bool {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < lens[k] {
            return true;
        }
        idx[k] = 0;
    }
    false
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Distinguisher {
    pub recipe: SymOp,
    pub verdicts: Vec<bool>,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(SymOp),
    App(Name, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Entry {
    node: Node,
    vals: Vec<Term>,
    depth: usize,
}

#[derive(Clone, Copy)]
struct Mode<'t> {
    add: bool,
    /// Constructors are visited; `false` keeps only those with a membership check.
    ctors: bool,
    detect: bool,
    target: Option<&'t Term>,
    last: bool,
}

enum Hit {
    Distinguisher(Distinguisher),
    Target(SymOp),
}

pub struct Enumerator<'m> {
    model: &'m SymbolicModel,
    sig: &'m RecipeSignature,
    outs: Vec<Vec<Term>>,
    entries: Vec<Entry>,
    index: HashMap<Vec<Term>, usize>,
    done: usize,
    limit: usize,
}

impl<'m> Enumerator<'m> {
    pub fn new(
        model: &'m SymbolicModel,
        sig: &'m RecipeSignature,
        outs: Vec<Vec<Term>>,
        limit: usize,
    ) -> Self {
        assert!(!outs.is_empty());
        Enumerator {
            model,
            sig,
            outs,
            entries: Vec::new(),
            index: HashMap::new(),
            done: 0,
            limit,
        }
    }

    fn views(&self) -> usize {
        self.outs.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn recipe(&self, i: usize) -> SymOp {
        match &self.entries[i].node {
            Node::Leaf(op) => op.clone(),
            Node::App(f, args) => {
                SymOp::App(f.clone(), args.iter().map(|&a| self.recipe(a)).collect())
            }
        }
    }

    /// Every stored entry with its first recipe and per-view values.
    pub fn entries(&self) -> Vec<(SymOp, Vec<Term>)> {
        (0..self.entries.len())
            .map(|i| (self.recipe(i), self.entries[i].vals.clone()))
            .collect()
    }

    fn node_recipe(&self, node: &Node) -> SymOp {
        match node {
            Node::Leaf(op) => op.clone(),
            Node::App(f, args) => {
                SymOp::App(f.clone(), args.iter().map(|&a| self.recipe(a)).collect())
            }
        }
    }

    /// Store all distinct values up to `depth`, ignoring partially defined ones.
    pub fn expand_full(&mut self, depth: usize) -> Result<(), DeductionError> {
        while self.done < depth {
            let mode = Mode {
                add: true,
                ctors: true,
                detect: false,
                target: None,
                last: false,
            };
            self.level(self.done + 1, mode)?;
            self.done += 1;
        }
        Ok(())
    }

    /// First recipe up to `depth` whose value in view 0 is `target`.
    pub fn find_target(
        &mut self,
        target: &Term,
        depth: usize,
    ) -> Result<Option<SymOp>, DeductionError> {
        assert_eq!(self.views(), 1);
        if let Some(&i) = self.index.get(&vec![target.clone()]) {
            if self.entries[i].depth <= depth {
                return Ok(Some(self.recipe(i)));
            }
        }
        while self.done < depth {
            let last = self.done + 1 == depth;
            let mode = Mode {
                add: !last,
                ctors: true,
                detect: false,
                target: Some(target),
                last,
            };
            let hit = self.level(self.done + 1, mode)?;
            if !last {
                self.done += 1;
            }
            if let Some(Hit::Target(r)) = hit {
                return Ok(Some(r));
            }
            if last {
                break;
            }
        }
        Ok(None)
    }

    /// First recipe up to `depth` defined in some views but not in others.
    pub fn find_distinguisher(
        &mut self,
        depth: usize,
    ) -> Result<Option<Distinguisher>, DeductionError> {
        let mut level = 1;
        while level <= depth {
            let last = level == depth;
            let mode = Mode {
                add: !last,
                ctors: !last,
                detect: true,
                target: None,
                last,
            };
            let hit = if level <= self.done && !last {
                None
            } else {
                self.level(level, mode)?
            };
            if !last && level > self.done {
                self.done = level;
            }
            if let Some(Hit::Distinguisher(d)) = hit {
                return Ok(Some(d));
            }
            level += 1;
        }
        Ok(None)
    }

    fn level(&mut self, level: usize, mode: Mode<'_>) -> Result<Option<Hit>, DeductionError> {
        if level == 1 {
            return self.leaves(mode);
        }
        let symbols: Vec<SymbolId> = self
            .sig
            .symbols
            .iter()
            .filter(|s| s.arity > 0)
            .cloned()
            .collect();
        for s in &symbols {
            let hit = match s.kind {
                SymbolKind::Constructor => {
                    if let (true, Some(t)) = (mode.last, mode.target) {
                        self.target_constructor(s, t, level)
                    } else if !mode.ctors && !self.model.has_check(&s.name) {
                        None
                    } else {
                        self.apply_symbol(s, level, mode)?
                    }
                }
                SymbolKind::Destructor => {
                    let eq = self.model.destructor(&s.name).is_some_and(|d| d.equality);
                    if eq {
                        if mode.detect && self.views() > 1 {
                            self.equality_collision(&s.name, level)
                        } else {
                            None
                        }
                    } else {
                        self.apply_symbol(s, level, mode)?
                    }
                }
                _ => None,
            };
            if hit.is_some() {
                return Ok(hit);
            }
        }
        Ok(None)
    }

    fn leaves(&mut self, mode: Mode<'_>) -> Result<Option<Hit>, DeductionError> {
        let params = self.outs.iter().map(Vec::len).max().unwrap_or(0);
        for leaf in self.sig.leaves(params) {
            let vals: Vec<Option<Term>> = (0..self.views())
                .map(|v| match &leaf {
                    SymOp::Param(i) => self.outs[v].get(i - 1).cloned(),
                    SymOp::Nonce(n, k) => Some(Term::Nonce(n.clone(), *k)),
                    SymOp::App(f, _) => self.model.construct(f, &[]),
                })
                .collect();
            if let Some(h) = self.consider(Node::Leaf(leaf), vals, 1, mode)? {
                return Ok(Some(h));
            }
        }
        Ok(None)
    }

    fn consider(
        &mut self,
        node: Node,
        vals: Vec<Option<Term>>,
        depth: usize,
        mode: Mode<'_>,
    ) -> Result<Option<Hit>, DeductionError> {
        let defined = vals.iter().filter(|v| v.is_some()).count();
        if defined == 0 {
            return Ok(None);
        }
        if defined < vals.len() {
            if mode.detect {
                return Ok(Some(Hit::Distinguisher(Distinguisher {
                    recipe: self.node_recipe(&node),
                    verdicts: vals.iter().map(Option::is_some).collect(),
                })));
            }
            return Ok(None);
        }
        let vals: Vec<Term> = vals.into_iter().map(Option::unwrap).collect();
        if self.index.contains_key(&vals) {
            return Ok(None);
        }
        if let Some(t) = mode.target {
            if &vals[0] == t {
                return Ok(Some(Hit::Target(self.node_recipe(&node))));
            }
        }
        if mode.add {
            if self.entries.len() >= self.limit {
                return Err(DeductionError::BoundExhausted(self.limit));
            }
            self.index.insert(vals.clone(), self.entries.len());
            self.entries.push(Entry { node, vals, depth });
        }
        Ok(None)
    }

    /// Candidate entries per argument position, pruned by destructor shapes.
    fn arg_lists(&self, s: &SymbolId, level: usize) -> Vec<Vec<usize>> {
        let shapes = self.model.destructor(&s.name).map(|d| d.shapes.clone());
        (0..s.arity)
            .map(|j| {
                (0..self.entries.len())
                    .filter(|&i| self.entries[i].depth < level)
                    .filter(|&i| match &shapes {
                        Some(sh) => self.entries[i].vals.iter().any(|v| sh[j].admits(v)),
                        None => true,
                    })
                    .collect()
            })
            .collect()
    }

    fn apply_symbol(
        &mut self,
        s: &SymbolId,
        level: usize,
        mode: Mode<'_>,
    ) -> Result<Option<Hit>, DeductionError> {
        let lists = self.arg_lists(s, level);
        if lists.iter().any(Vec::is_empty) {
            return Ok(None);
        }
        let lens: Vec<usize> = lists.iter().map(Vec::len).collect();
        let dest = self.model.destructor(&s.name).cloned();
        let mut pos = vec![0usize; s.arity];
        let mut args: Vec<usize> = vec![0; s.arity];
        let mut buf: Vec<Term> = Vec::with_capacity(s.arity);
        loop {
            for j in 0..s.arity {
                args[j] = lists[j][pos[j]];
            }
            if args.iter().any(|&a| self.entries[a].depth == level - 1) {
                let mut vals = Vec::with_capacity(self.views());
                for v in 0..self.views() {
                    buf.clear();
                    buf.extend(args.iter().map(|&a| self.entries[a].vals[v].clone()));
                    vals.push(match &dest {
                        Some(d) => d.apply(&buf),
                        None => self.model.construct(&s.name, &buf),
                    });
                }
                if let Some(h) =
                    self.consider(Node::App(s.name.clone(), args.clone()), vals, level, mode)?
                {
                    return Ok(Some(h));
                }
            }
            if !next_tuple_in(&mut pos, &lens) {
                break;
            }
        }
        Ok(None)
    }

    /// At the last level a constructor can only hit the target by rebuilding
    /// its head from already known arguments.
    fn target_constructor(&self, s: &SymbolId, target: &Term, level: usize) -> Option<Hit> {
        match target {
            Term::App(f, targs) if *f == s.name && targs.len() == s.arity => {
                let idx: Option<Vec<usize>> = targs
                    .iter()
                    .map(|a| {
                        self.index
                            .get(&vec![a.clone()])
                            .copied()
                            .filter(|&i| self.entries[i].depth < level)
                    })
                    .collect();
                let idx = idx?;
                self.model.construct(f, targs)?;
                Some(Hit::Target(self.node_recipe(&Node::App(f.clone(), idx))))
            }
            _ => None,
        }
    }

    fn equality_collision(&self, eq: &Name, level: usize) -> Option<Hit> {
        let mut best: Option<(usize, usize)> = None;
        for v in 0..self.views() {
            let mut groups: HashMap<&Term, Vec<usize>> = HashMap::new();
            for (i, e) in self.entries.iter().enumerate() {
                if e.depth < level {
                    groups.entry(&e.vals[v]).or_default().push(i);
                }
            }
            for g in groups.values().filter(|g| g.len() > 1) {
                for x in 0..g.len() {
                    for y in x + 1..g.len() {
                        let (a, b) = (g[x], g[y]);
                        if self.entries[a].depth.max(self.entries[b].depth) == level - 1
                            && best.is_none_or(|p| (a, b) < p)
                        {
                            best = Some((a, b));
                        }
                    }
                }
            }
        }
        let (a, b) = best?;
        let verdicts = (0..self.views())
            .map(|v| self.entries[a].vals[v] == self.entries[b].vals[v])
            .collect();
        Some(Hit::Distinguisher(Distinguisher {
            recipe: SymOp::App(eq.clone(), vec![self.recipe(a), self.recipe(b)]),
            verdicts,
        }))
    }
}
