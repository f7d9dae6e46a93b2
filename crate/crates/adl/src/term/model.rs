use super::{
    iota_decode, iota_encode, name, Bitstring, Name, SymOp, SymbolId, SymbolKind, Term, TermError,
};
use crate::ops::{self, BinOp, RelOp, UnOp};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

/// Native semantics of a destructor: `None` is ⊥.
pub type DestFn = Arc<dyn Fn(&[Term]) -> Option<Term> + Send + Sync>;

/// Local well-formedness of a constructor application, given its arguments.
pub type LocalCheck = Arc<dyn Fn(&[Term]) -> bool + Send + Sync>;

/// A promise about where a destructor can be defined: if an argument does
/// not fit its shape, the destructor yields ⊥. Used to prune recipe search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArgShape {
    Any,
    Head(Vec<Name>),
    Bits,
}

impl ArgShape {
    pub fn head(names: &[&str]) -> ArgShape {
        ArgShape::Head(names.iter().map(|n| name(n)).collect())
    }

    pub fn admits(&self, t: &Term) -> bool {
        match self {
            ArgShape::Any => true,
            ArgShape::Head(names) => matches!(t, Term::App(f, _) if names.iter().any(|n| n == f)),
            ArgShape::Bits => iota_decode(t).is_some(),
        }
    }
}

#[derive(Clone)]
pub struct Destructor {
    pub name: Name,
    pub arity: usize,
    pub shapes: Vec<ArgShape>,
    /// Defined exactly on equal arguments, returning the first.
    pub equality: bool,
    func: DestFn,
}

impl Destructor {
    pub fn new(n: &str, arity: usize, func: DestFn) -> Self {
        Destructor {
            name: name(n),
            arity,
            shapes: vec![ArgShape::Any; arity],
            equality: false,
            func,
        }
    }

    pub fn with_shapes(mut self, shapes: Vec<ArgShape>) -> Self {
        assert_eq!(shapes.len(), self.arity);
        self.shapes = shapes;
        self
    }

    pub fn equals() -> Self {
        let mut d = Destructor::new(
            "equals",
            2,
            Arc::new(|a: &[Term]| (a[0] == a[1]).then(|| a[0].clone())),
        );
        d.equality = true;
        d
    }

    /// `f(c(x)) = x` for a unary constructor `c`.
    pub fn unwrap1(n: &str, ctor: &str) -> Self {
        let c = name(ctor);
        let c2 = c.clone();
        Destructor::new(
            n,
            1,
            Arc::new(move |a: &[Term]| match &a[0] {
                Term::App(f, args) if *f == c2 && args.len() == 1 => Some(args[0].clone()),
                _ => None,
            }),
        )
        .with_shapes(vec![ArgShape::Head(vec![c])])
    }

    /// `f(c(x_1..x_n)) = x_i`.
    pub fn project(n: &str, ctor: &str, index: usize) -> Self {
        let c = name(ctor);
        let c2 = c.clone();
        Destructor::new(
            n,
            1,
            Arc::new(move |a: &[Term]| match &a[0] {
                Term::App(f, args) if *f == c2 && index < args.len() => Some(args[index].clone()),
                _ => None,
            }),
        )
        .with_shapes(vec![ArgShape::Head(vec![c])])
    }

    /// `f(x) = x` iff `x = target`.
    pub fn distinguisher(n: &str, target: Term) -> Self {
        let shape = match &target {
            Term::App(f, _) => ArgShape::Head(vec![f.clone()]),
            Term::Nonce(..) => ArgShape::Any,
        };
        Destructor::new(
            n,
            1,
            Arc::new(move |a: &[Term]| (a[0] == target).then(|| a[0].clone())),
        )
        .with_shapes(vec![shape])
    }

    pub fn apply(&self, args: &[Term]) -> Option<Term> {
        (self.func)(args)
    }

    pub fn symbol(&self) -> SymbolId {
        SymbolId {
            name: self.name.clone(),
            arity: self.arity,
            kind: SymbolKind::Destructor,
        }
    }
}

impl fmt::Debug for Destructor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.arity)
    }
}

/// Constructors with arities, destructors with native semantics, and an
/// optional per-constructor membership check defining the message type.
#[derive(Clone, Default)]
pub struct SymbolicModel {
    constructors: BTreeMap<Name, usize>,
    destructors: BTreeMap<Name, Destructor>,
    checks: BTreeMap<Name, LocalCheck>,
}

impl fmt::Debug for SymbolicModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymbolicModel")
            .field("constructors", &self.constructors)
            .field(
                "destructors",
                &self.destructors.values().collect::<Vec<_>>(),
            )
            .finish()
    }
}

fn reserved(n: &str) -> bool {
    n == "n" || n.starts_with("x_")
}

impl SymbolicModel {
    pub fn new() -> Self {
        Self::default()
    }

    fn taken(&self, n: &str) -> bool {
        self.constructors.contains_key(n) || self.destructors.contains_key(n)
    }

    pub fn with_constructor(mut self, n: &str, arity: usize) -> Result<Self, TermError> {
        if self.taken(n) || reserved(n) {
            return Err(TermError::Collision(n.to_string()));
        }
        self.constructors.insert(name(n), arity);
        Ok(self)
    }

    pub fn with_destructor(mut self, d: Destructor) -> Result<Self, TermError> {
        if self.taken(&d.name) || reserved(&d.name) {
            return Err(TermError::Collision(d.name.to_string()));
        }
        self.destructors.insert(d.name.clone(), d);
        Ok(self)
    }

    /// Restrict the message type at applications of constructor `n`.
    pub fn with_check(mut self, n: &str, check: LocalCheck) -> Result<Self, TermError> {
        if !self.constructors.contains_key(n) {
            return Err(TermError::UnknownSymbol(n.to_string()));
        }
        self.checks.insert(name(n), check);
        Ok(self)
    }

    pub fn constructor_arity(&self, n: &str) -> Option<usize> {
        self.constructors.get(n).copied()
    }

    pub fn destructor(&self, n: &str) -> Option<&Destructor> {
        self.destructors.get(n)
    }

    pub fn constructors(&self) -> impl Iterator<Item = (&Name, usize)> {
        self.constructors.iter().map(|(n, a)| (n, *a))
    }

    pub fn destructors(&self) -> impl Iterator<Item = &Destructor> {
        self.destructors.values()
    }

    /// All constructor and destructor symbols, ordered by name.
    pub fn symbols(&self) -> Vec<SymbolId> {
        let mut v: Vec<SymbolId> = self
            .constructors
            .iter()
            .map(|(n, a)| SymbolId {
                name: n.clone(),
                arity: *a,
                kind: SymbolKind::Constructor,
            })
            .chain(self.destructors.values().map(Destructor::symbol))
            .collect();
        v.sort_by(|a, b| a.name.cmp(&b.name));
        v
    }

    pub fn symbol(&self, n: &str) -> Option<SymbolId> {
        if let Some(a) = self.constructors.get(n) {
            return Some(SymbolId {
                name: name(n),
                arity: *a,
                kind: SymbolKind::Constructor,
            });
        }
        self.destructors.get(n).map(Destructor::symbol)
    }

    /// Membership in the message type: every constructor known with the
    /// right arity and accepted by its local check.
    pub fn contains(&self, t: &Term) -> bool {
        match t {
            Term::Nonce(..) => true,
            Term::App(f, args) => {
                self.constructors.get(f) == Some(&args.len())
                    && self.checks.get(f).is_none_or(|c| c(args))
                    && args.iter().all(|a| self.contains(a))
            }
        }
    }

    pub fn has_check(&self, n: &str) -> bool {
        self.checks.contains_key(n)
    }

    /// Apply a known constructor; ⊥ only when its membership check fails.
    pub fn construct(&self, f: &Name, args: &[Term]) -> Option<Term> {
        if let Some(c) = self.checks.get(f) {
            if !c(args) {
                return None;
            }
        }
        Some(Term::App(f.clone(), args.to_vec().into()))
    }

    pub fn eval_symbol(&self, f: &SymbolId, args: &[Term]) -> Result<Option<Term>, TermError> {
        if args.len() != f.arity {
            return Err(TermError::Arity {
                name: f.name.to_string(),
                expected: f.arity,
                got: args.len(),
            });
        }
        match f.kind {
            SymbolKind::ProtocolNonce => Ok(Some(Term::Nonce(
                f.name.clone(),
                super::NonceKind::Protocol,
            ))),
            SymbolKind::AttackerNonce => Ok(Some(Term::Nonce(
                f.name.clone(),
                super::NonceKind::Attacker,
            ))),
            SymbolKind::Constructor => match self.constructors.get(&f.name) {
                Some(&a) if a == f.arity => Ok(self.construct(&f.name, args)),
                Some(&a) => Err(TermError::Arity {
                    name: f.name.to_string(),
                    expected: a,
                    got: args.len(),
                }),
                None => Err(TermError::UnknownSymbol(f.name.to_string())),
            },
            SymbolKind::Destructor => match self.destructors.get(&f.name) {
                Some(d) if d.arity == f.arity => Ok(d.apply(args)),
                Some(d) => Err(TermError::Arity {
                    name: f.name.to_string(),
                    expected: d.arity,
                    got: args.len(),
                }),
                None => Err(TermError::UnknownSymbol(f.name.to_string())),
            },
        }
    }

    /// Apply a constructor or destructor by name.
    pub fn apply(&self, f: &str, args: &[Term]) -> Result<Option<Term>, TermError> {
        let sym = self
            .symbol(f)
            .ok_or_else(|| TermError::UnknownSymbol(f.to_string()))?;
        self.eval_symbol(&sym, args)
    }

    /// Check every node names a known symbol with the right arity.
    pub fn check_op(&self, op: &SymOp) -> Result<(), TermError> {
        match op {
            SymOp::Param(_) | SymOp::Nonce(..) => Ok(()),
            SymOp::App(f, args) => {
                let expected = self
                    .constructors
                    .get(f)
                    .copied()
                    .or_else(|| self.destructors.get(f).map(|d| d.arity))
                    .ok_or_else(|| TermError::UnknownSymbol(f.to_string()))?;
                if expected != args.len() {
                    return Err(TermError::Arity {
                        name: f.to_string(),
                        expected,
                        got: args.len(),
                    });
                }
                args.iter().try_for_each(|a| self.check_op(a))
            }
        }
    }

    pub fn eval_op(&self, op: &SymOp, inputs: &[Term]) -> Result<Option<Term>, TermError> {
        self.check_op(op)?;
        if op.arity() > inputs.len() {
            return Err(TermError::MissingInputs {
                needed: op.arity(),
                got: inputs.len(),
            });
        }
        Ok(self.eval_checked(op, inputs))
    }

    /// Evaluation of an operation already validated by `check_op`.
    pub fn eval_checked(&self, op: &SymOp, inputs: &[Term]) -> Option<Term> {
        match op {
            SymOp::Param(i) => inputs.get(i - 1).cloned(),
            SymOp::Nonce(n, k) => Some(Term::Nonce(n.clone(), *k)),
            SymOp::App(f, args) => {
                let vals = args
                    .iter()
                    .map(|a| self.eval_checked(a, inputs))
                    .collect::<Option<Vec<_>>>()?;
                if let Some(d) = self.destructors.get(f) {
                    d.apply(&vals)
                } else {
                    self.construct(f, &vals)
                }
            }
        }
    }

    /// Stepwise evaluation: the operation with parameters substituted, then
    /// one line per destructor application, innermost-leftmost first.
    pub fn eval_trace(&self, op: &SymOp, inputs: &[Term]) -> Result<Vec<String>, TermError> {
        self.check_op(op)?;
        if op.arity() > inputs.len() {
            return Err(TermError::MissingInputs {
                needed: op.arity(),
                got: inputs.len(),
            });
        }
        let mut lines = vec![op.to_string()];
        let mut cur = substitute(op, inputs);
        if &cur != op {
            lines.push(cur.to_string());
        }
        loop {
            match self.reduce_once(&cur) {
                Reduce::Done => break,
                Reduce::Bottom => {
                    lines.push("⊥".to_string());
                    break;
                }
                Reduce::Step(next) => {
                    lines.push(next.to_string());
                    cur = next;
                }
            }
        }
        Ok(lines)
    }

    fn reduce_once(&self, op: &SymOp) -> Reduce {
        match op {
            SymOp::Param(_) | SymOp::Nonce(..) => Reduce::Done,
            SymOp::App(f, args) => {
                for (i, a) in args.iter().enumerate() {
                    match self.reduce_once(a) {
                        Reduce::Done => {}
                        Reduce::Bottom => return Reduce::Bottom,
                        Reduce::Step(na) => {
                            let mut args = args.clone();
                            args[i] = na;
                            return Reduce::Step(SymOp::App(f.clone(), args));
                        }
                    }
                }
                match self.destructors.get(f) {
                    None => Reduce::Done,
                    Some(d) => {
                        let vals: Option<Vec<Term>> = args.iter().map(closed_term).collect();
                        match vals.and_then(|v| d.apply(&v)) {
                            Some(t) => Reduce::Step(SymOp::from_term(&t)),
                            None => Reduce::Bottom,
                        }
                    }
                }
            }
        }
    }

    /// Bitstrings, equality, pairing and the 0-test at width `w`.
    pub fn core(width: u32) -> Self {
        let zero = iota_encode(&ops::num_to_bits(0, width));
        let m = SymbolicModel::new()
            .with_constructor("emp", 0)
            .and_then(|m| m.with_constructor("string_0", 1))
            .and_then(|m| m.with_constructor("string_1", 1))
            .and_then(|m| m.with_constructor("pair", 2))
            .and_then(|m| m.with_destructor(Destructor::unwrap1("unstring_0", "string_0")))
            .and_then(|m| m.with_destructor(Destructor::unwrap1("unstring_1", "string_1")))
            .and_then(|m| m.with_destructor(Destructor::project("fst", "pair", 0)))
            .and_then(|m| m.with_destructor(Destructor::project("snd", "pair", 1)))
            .and_then(|m| m.with_destructor(Destructor::equals()))
            .and_then(|m| m.with_destructor(Destructor::distinguisher("iszero", zero)));
        m.expect("core symbols are distinct")
    }

    /// The ADL-embeddable model: the core plus locations, `void`,
    /// `finalCall`, one 0-ary constant per operator and per name in `mal`
    /// with a distinguishing destructor each, and lifted operators `d_<op>`.
    pub fn adl_embeddable(width: u32, mal: &[&str]) -> Self {
        let mut m = SymbolicModel::core(width);
        let mut constants: Vec<String> = vec!["void".into(), "finalCall".into()];
        constants.extend(UnOp::ALL.iter().map(|o| format!("c_{}", o.name())));
        constants.extend(BinOp::ALL.iter().map(|o| format!("c_{}", o.name())));
        constants.extend(RelOp::ALL.iter().map(|o| format!("c_{}", o.name())));
        constants.extend(mal.iter().map(|n| format!("mal_{n}")));
        for c in &constants {
            m = m.with_constructor(c, 0).expect("fresh constant");
            m = m
                .with_destructor(Destructor::distinguisher(
                    &format!("is_{c}"),
                    Term::constant(c),
                ))
                .expect("fresh distinguisher");
        }
        m = m.with_constructor("loc", 1).expect("fresh");
        m = m
            .with_destructor(Destructor::unwrap1("unloc", "loc"))
            .expect("fresh");
        for d in lifted_adl_ops(width) {
            m = m.with_destructor(d).expect("fresh lifted op");
        }
        m
    }
}

enum Reduce {
    Done,
    Bottom,
    Step(SymOp),
}

fn substitute(op: &SymOp, inputs: &[Term]) -> SymOp {
    match op {
        SymOp::Param(i) => SymOp::from_term(&inputs[i - 1]),
        SymOp::Nonce(..) => op.clone(),
        SymOp::App(f, args) => SymOp::App(
            f.clone(),
            args.iter().map(|a| substitute(a, inputs)).collect(),
        ),
    }
}

fn closed_term(op: &SymOp) -> Option<Term> {
    match op {
        SymOp::Param(_) => None,
        SymOp::Nonce(n, k) => Some(Term::Nonce(n.clone(), *k)),
        SymOp::App(f, args) => Some(Term::App(
            f.clone(),
            args.iter()
                .map(closed_term)
                .collect::<Option<Vec<_>>>()?
                .into(),
        )),
    }
}

/// Union of two models with disjoint symbols.
pub fn combine_models(m1: &SymbolicModel, m2: &SymbolicModel) -> Result<SymbolicModel, TermError> {
    let mut out = m1.clone();
    for (n, a) in &m2.constructors {
        out = out.with_constructor(n, *a)?;
    }
    for d in m2.destructors.values() {
        out = out.with_destructor(d.clone())?;
    }
    for (n, c) in &m2.checks {
        out.checks.insert(n.clone(), c.clone());
    }
    Ok(out)
}

/// A destructor defined on ι-encoded arguments by a total bitstring function.
pub fn lift_bitstring_fn(
    model: &SymbolicModel,
    n: &str,
    arity: usize,
    f: Arc<dyn Fn(&[Bitstring]) -> Bitstring + Send + Sync>,
) -> Result<(SymbolicModel, SymbolId), TermError> {
    lift_partial_bitstring_fn(model, n, arity, Arc::new(move |a: &[Bitstring]| Some(f(a))))
}

pub fn lift_partial_bitstring_fn(
    model: &SymbolicModel,
    n: &str,
    arity: usize,
    f: Arc<dyn Fn(&[Bitstring]) -> Option<Bitstring> + Send + Sync>,
) -> Result<(SymbolicModel, SymbolId), TermError> {
    let d = lifted(n, arity, f);
    let sym = d.symbol();
    Ok((model.clone().with_destructor(d)?, sym))
}

fn lifted(
    n: &str,
    arity: usize,
    f: Arc<dyn Fn(&[Bitstring]) -> Option<Bitstring> + Send + Sync>,
) -> Destructor {
    Destructor::new(
        n,
        arity,
        Arc::new(move |a: &[Term]| {
            let bits = a.iter().map(iota_decode).collect::<Option<Vec<_>>>()?;
            f(&bits).map(|b| iota_encode(&b))
        }),
    )
    .with_shapes(vec![ArgShape::Bits; arity])
}

/// Lifted ADL operators: defined on w-bit ι-encodings, relations yield ι(1) or ι(0).
pub fn lifted_adl_ops(w: u32) -> Vec<Destructor> {
    let mut out = Vec::new();
    for op in UnOp::ALL {
        out.push(lifted(
            &format!("d_{}", op.name()),
            1,
            Arc::new(move |a: &[Bitstring]| {
                let x = ops::bits_to_num(&a[0], w)?;
                Some(ops::num_to_bits(op.eval(x, w), w))
            }),
        ));
    }
    for op in BinOp::ALL {
        out.push(lifted(
            &format!("d_{}", op.name()),
            2,
            Arc::new(move |a: &[Bitstring]| {
                let x = ops::bits_to_num(&a[0], w)?;
                let y = ops::bits_to_num(&a[1], w)?;
                op.eval(x, y, w).map(|r| ops::num_to_bits(r, w))
            }),
        ));
    }
    for op in RelOp::ALL {
        out.push(lifted(
            &format!("d_{}", op.name()),
            2,
            Arc::new(move |a: &[Bitstring]| {
                let x = ops::bits_to_num(&a[0], w)?;
                let y = ops::bits_to_num(&a[1], w)?;
                Some(ops::num_to_bits(op.holds(x, y) as i64, w))
            }),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: &str) -> Term {
        s.parse().unwrap()
    }

    #[test]
    fn symbol_evaluation() {
        let m = SymbolicModel::core(4);
        assert_eq!(m.apply("equals", &[t("a"), t("a")]).unwrap(), Some(t("a")));
        assert_eq!(m.apply("fst", &[t("pair(a,b)")]).unwrap(), Some(t("a")));
        assert_eq!(m.apply("unstring_0", &[t("string_1(emp)")]).unwrap(), None);
        assert!(matches!(m.apply("fst", &[]), Err(TermError::Arity { .. })));
        assert!(matches!(
            m.apply("nope", &[]),
            Err(TermError::UnknownSymbol(_))
        ));
    }

    #[test]
    fn operation_evaluation() {
        let m = SymbolicModel::core(4);
        let x1 = SymOp::parse("x_1").unwrap();
        assert_eq!(m.eval_op(&x1, &[t("a")]).unwrap(), Some(t("a")));
        let op = SymOp::parse("fst(pair(x_1,x_2))").unwrap();
        assert_eq!(m.eval_op(&op, &[t("a"), t("b")]).unwrap(), Some(t("a")));
        let eq = SymOp::parse("equals(x_1,x_2)").unwrap();
        assert_eq!(m.eval_op(&eq, &[t("a"), t("b")]).unwrap(), None);
        assert!(m.eval_op(&eq, &[t("a")]).is_err());
    }

    #[test]
    fn iszero_tests_width() {
        let m = SymbolicModel::core(2);
        let z2 = iota_encode(&"00".parse().unwrap());
        let z1 = iota_encode(&"0".parse().unwrap());
        assert_eq!(m.apply("iszero", std::slice::from_ref(&z2)).unwrap(), Some(z2));
        assert_eq!(m.apply("iszero", &[z1]).unwrap(), None);
    }

    #[test]
    fn lifting_and_collisions() {
        let m = SymbolicModel::core(4);
        let xor: Arc<dyn Fn(&[Bitstring]) -> Bitstring + Send + Sync> =
            Arc::new(|a: &[Bitstring]| {
                Bitstring(
                    a[0].bits()
                        .iter()
                        .zip(a[1].bits())
                        .map(|(x, y)| x ^ y)
                        .collect(),
                )
            });
        let (m2, sym) = lift_bitstring_fn(&m, "d_xor", 2, xor.clone()).unwrap();
        assert_eq!(sym.kind, SymbolKind::Destructor);
        let r = m2
            .apply(
                "d_xor",
                &[
                    iota_encode(&"10".parse().unwrap()),
                    iota_encode(&"11".parse().unwrap()),
                ],
            )
            .unwrap();
        assert_eq!(r, Some(iota_encode(&"01".parse().unwrap())));
        assert_eq!(
            m2.apply("d_xor", &[t("pair(a,b)"), t("string_1(emp)")])
                .unwrap(),
            None
        );
        assert!(lift_bitstring_fn(&m2, "d_xor", 2, xor).is_err());
        assert!(combine_models(&m, &m).is_err());
    }

    #[test]
    fn combination_keeps_old_semantics() {
        let enc = SymbolicModel::new().with_constructor("enc", 2).unwrap();
        let m = combine_models(&SymbolicModel::core(4), &enc).unwrap();
        assert!(m.constructor_arity("enc").is_some());
        assert!(m.constructor_arity("string_0").is_some());
        assert_eq!(m.apply("fst", &[t("pair(a,b)")]).unwrap(), Some(t("a")));
    }

    #[test]
    fn membership_checks_restrict_constructors() {
        let m = SymbolicModel::core(4)
            .with_check("pair", Arc::new(|a: &[Term]| a[0] != a[1]))
            .unwrap();
        assert_eq!(m.apply("pair", &[t("a"), t("a")]).unwrap(), None);
        assert!(!m.contains(&t("pair(emp,emp)")));
        assert!(m.contains(&t("pair(emp,string_0(emp))")));
    }

    #[test]
    fn adl_model_distinguishes_constants() {
        let m = SymbolicModel::adl_embeddable(4, &["leak"]);
        assert_eq!(
            m.apply("is_mal_leak", &[t("mal_leak")]).unwrap(),
            Some(t("mal_leak"))
        );
        assert_eq!(m.apply("is_mal_leak", &[t("c_add")]).unwrap(), None);
        let three = iota_encode(&ops::num_to_bits(3, 4));
        let four = iota_encode(&ops::num_to_bits(4, 4));
        let seven = iota_encode(&ops::num_to_bits(7, 4));
        assert_eq!(
            m.apply("d_add", &[three.clone(), four.clone()]).unwrap(),
            Some(seven)
        );
        let one = iota_encode(&ops::num_to_bits(1, 4));
        assert_eq!(m.apply("d_lt", &[three, four]).unwrap(), Some(one));
    }

    fn arb_term() -> impl Strategy<Value = Term> {
        let leaf = prop_oneof![
            Just(t("emp")),
            Just(t("a")),
            "[a-c]".prop_map(|s| Term::protocol_nonce(&s)),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|x| Term::app("string_0", vec![x])),
                inner.clone().prop_map(|x| Term::app("string_1", vec![x])),
                (inner.clone(), inner).prop_map(|(x, y)| Term::pair(x, y)),
            ]
        })
    }

    proptest! {
        #[test]
        fn pair_is_transparent(x in arb_term(), y in arb_term()) {
            let m = SymbolicModel::core(4);
            let p = Term::pair(x.clone(), y.clone());
            prop_assert_eq!(m.apply("fst", std::slice::from_ref(&p)).unwrap(), Some(x));
            prop_assert_eq!(m.apply("snd", &[p]).unwrap(), Some(y));
        }

        #[test]
        fn evaluation_is_deterministic(x in arb_term(), y in arb_term()) {
            let m = SymbolicModel::adl_embeddable(3, &[]);
            for d in m.destructors() {
                let args: Vec<Term> = [x.clone(), y.clone()].into_iter().cycle().take(d.arity).collect();
                prop_assert_eq!(d.apply(&args), d.apply(&args));
            }
        }

        #[test]
        fn shapes_are_sound(x in arb_term(), y in arb_term()) {
            let m = SymbolicModel::adl_embeddable(3, &["leak"]);
            for d in m.destructors() {
                let args: Vec<Term> = [x.clone(), y.clone()].into_iter().cycle().take(d.arity).collect();
                let fits = d.shapes.iter().zip(&args).all(|(s, a)| s.admits(a));
                if !fits {
                    prop_assert_eq!(d.apply(&args), None, "{} defined outside its shape", d.name);
                }
            }
        }

        #[test]
        fn lifted_xor_matches_bits(a in proptest::collection::vec(any::<bool>(), 0..=8),
                                   b in proptest::collection::vec(any::<bool>(), 0..=8)) {
            let f: Arc<dyn Fn(&[Bitstring]) -> Bitstring + Send + Sync> = Arc::new(|v: &[Bitstring]| {
                let n = v[0].len().max(v[1].len());
                let pad = |s: &Bitstring| {
                    let mut out = vec![false; n - s.len()];
                    out.extend_from_slice(s.bits());
                    out
                };
                Bitstring(pad(&v[0]).iter().zip(pad(&v[1])).map(|(x, y)| x ^ y).collect())
            });
            let (m, _) = lift_bitstring_fn(&SymbolicModel::core(4), "d_x", 2, f.clone()).unwrap();
            let (a, b) = (Bitstring(a), Bitstring(b));
            let r = m.apply("d_x", &[iota_encode(&a), iota_encode(&b)]).unwrap().unwrap();
            prop_assert_eq!(iota_decode(&r), Some(f(&[a, b])));
        }
    }
}
