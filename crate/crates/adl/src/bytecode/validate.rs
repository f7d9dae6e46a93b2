use super::*;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pc: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        write!(f, "[{}] {}", self.code, self.message)?;
        if let (Some(m), Some(pc)) = (&self.method, self.pc) {
            write!(f, " (in {m} at pc {pc})")?;
        }
        Ok(())
    }
}

struct Sink<'p> {
    p: &'p Program,
    out: Vec<Diagnostic>,
}

impl Sink<'_> {
    fn global(&mut self, code: &str, message: String) {
        self.out.push(Diagnostic {
            code: code.into(),
            message,
            method: None,
            pc: None,
            line: None,
        });
    }

    fn at(&mut self, m: &str, pc: usize, code: &str, message: String) {
        self.out.push(Diagnostic {
            code: code.into(),
            message,
            method: Some(m.into()),
            pc: Some(pc),
            line: self.p.line_of(m, pc),
        });
    }
}

fn mids(p: &Program) -> BTreeSet<String> {
    let mut s: BTreeSet<String> = p.lookup_static.keys().cloned().collect();
    for t in [&p.lookup_direct, &p.lookup_super, &p.lookup_virtual] {
        s.extend(t.keys().map(|k| k.0.clone()));
    }
    s.extend(p.mal.keys().cloned());
    for m in p.methods.values() {
        s.extend(
            m.body
                .iter()
                .filter_map(|i| i.invoke_args().map(|a| a.2.to_string())),
        );
    }
    s
}

/// Static well-formedness checks; an empty result means the program is accepted.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut d = Sink { p, out: vec![] };
    match p.entry() {
        None => d.global("missing-entry", format!("no method `{ENTRY}`")),
        Some(m) if !m.is_static => d.global("missing-entry", format!("`{ENTRY}` must be static")),
        _ => {}
    }

    let mids = mids(p);
    let fids: BTreeSet<String> = p.fields.keys().cloned().collect();
    for (a, an, b, bn) in [
        (&p.classes, "class", &fids, "field"),
        (&p.classes, "class", &mids, "method"),
        (&fids, "field", &mids, "method"),
    ] {
        for x in a.intersection(b) {
            d.global(
                "id-overlap",
                format!("`{x}` is both a {an} id and a {bn} id"),
            );
        }
    }

    for name in p.mal.keys() {
        let in_tables = p.lookup_static.contains_key(name)
            || [&p.lookup_direct, &p.lookup_super, &p.lookup_virtual]
                .iter()
                .any(|t| t.keys().any(|k| &k.0 == name));
        if in_tables || p.methods.contains_key(name) {
            d.global(
                "mal-in-lookup",
                format!("malicious method `{name}` is also program-defined"),
            );
        }
    }

    for (mid, l) in &p.lookup_static {
        if !p.methods.get(l).is_some_and(|m| m.is_static) {
            d.global(
                "unknown-lookup-target",
                format!("static `{mid}` resolves to missing static method `{l}`"),
            );
        }
    }
    for (t, table) in [
        (LookupTable::Direct, &p.lookup_direct),
        (LookupTable::Super, &p.lookup_super),
        (LookupTable::Virtual, &p.lookup_virtual),
    ] {
        for ((mid, cl), l) in table {
            if !p.methods.contains_key(l) {
                d.global(
                    "unknown-lookup-target",
                    format!(
                        "{} `{mid}` on `{cl}` resolves to missing method `{l}`",
                        t.name()
                    ),
                );
            }
            if !p.classes.contains(cl) {
                d.global(
                    "unknown-class",
                    format!("lookup names undeclared class `{cl}`"),
                );
            }
        }
    }
    for f in p.fields.values() {
        if !p.classes.contains(&f.class) {
            d.global(
                "unknown-class",
                format!("field `{}` of undeclared class `{}`", f.name, f.class),
            );
        }
    }
    for e in &p.libspec {
        if !p.classes.contains(&e.class) {
            d.global(
                "unknown-class",
                format!("library entry for undeclared class `{}`", e.class),
            );
        }
        if !p.symops.contains_key(&e.symop) {
            d.global(
                "unknown-symop",
                format!("library entry names undeclared operation `{}`", e.symop),
            );
        }
        let fields = p.instance_fields(&e.class);
        for a in &e.when {
            let (Atom::FieldEq(f, _) | Atom::Has(f)) = a;
            if !fields.contains(&f.as_str()) {
                d.global(
                    "unknown-field",
                    format!("library predicate on unknown field `{}.{f}`", e.class),
                );
            }
        }
    }

    for m in p.methods.values() {
        if m.body.is_empty() {
            d.global(
                "empty-method",
                format!("method `{}` has no instructions", m.label),
            );
            continue;
        }
        let len = m.body.len() as i64;
        for (pc, i) in m.body.iter().enumerate() {
            check_instr(&mut d, &m.label, pc, i);
            for off in i.branch_offsets() {
                let t = pc as i64 + off;
                if !(0..len).contains(&t) {
                    let code = if off == 1 && !matches!(i, Instr::Goto { .. }) {
                        "falls-off-end"
                    } else {
                        "branch-out-of-range"
                    };
                    d.at(
                        &m.label,
                        pc,
                        code,
                        format!("control reaches {t}, outside 0..{len}"),
                    );
                }
            }
        }
    }
    d.out
}

fn check_instr(d: &mut Sink<'_>, m: &str, pc: usize, i: &Instr) {
    let p = d.p;
    let class = |d: &mut Sink<'_>, cl: &str| {
        if !p.classes.contains(cl) {
            d.at(m, pc, "unknown-class", format!("undeclared class `{cl}`"));
        }
    };
    let field = |d: &mut Sink<'_>, fid: &str, want_static: bool| match p.fields.get(fid) {
        None => d.at(m, pc, "unknown-field", format!("undeclared field `{fid}`")),
        Some(f) if f.is_static != want_static => {
            let k = if f.is_static { "static" } else { "instance" };
            d.at(m, pc, "unknown-field", format!("`{fid}` is a {k} field"))
        }
        _ => {}
    };
    match i {
        Instr::Wide { text } => d.at(
            m,
            pc,
            "unsupported-variant",
            format!("wide form `{text}` is not supported"),
        ),
        Instr::InstanceOf { cl, .. }
        | Instr::NewInstance { cl, .. }
        | Instr::ConstClass { cl, .. } => class(d, cl),
        Instr::Iget { fid, .. } | Instr::Iput { fid, .. } => field(d, fid, false),
        Instr::Sget { fid, .. } | Instr::Sput { fid, .. } => field(d, fid, true),
        Instr::FilledNewArray { n, .. } if *n > 5 => d.at(
            m,
            pc,
            "bad-invoke-count",
            format!("count {n} exceeds 5 registers"),
        ),
        Instr::Invoke { n, .. } if *n > 5 => d.at(
            m,
            pc,
            "bad-invoke-count",
            format!("count {n} exceeds 5 registers"),
        ),
        _ => {}
    }
    if let Some((kind, args, mid)) = i.invoke_args() {
        if kind != InvokeKind::Static && args.is_empty() {
            d.at(
                m,
                pc,
                "bad-invoke-count",
                format!("{} call of `{mid}` needs a receiver", kind.name()),
            );
        }
        if let Some(md) = p.mal.get(mid) {
            if !md.kind.matches(kind) {
                d.at(
                    m,
                    pc,
                    "unresolved-invoke",
                    format!(
                        "malicious `{mid}` is {}, invoked as {}",
                        md.kind.name(),
                        kind.name()
                    ),
                );
            } else if md.arity as usize != args.len() {
                d.at(
                    m,
                    pc,
                    "bad-invoke-count",
                    format!(
                        "malicious `{mid}` takes {} arguments, given {}",
                        md.arity,
                        args.len()
                    ),
                );
            }
            return;
        }
        let found = match kind {
            InvokeKind::Static => p.lookup_static.contains_key(mid),
            InvokeKind::Direct => p.lookup_direct.keys().any(|k| k.0 == mid),
            InvokeKind::Super => p.lookup_super.keys().any(|k| k.0 == mid),
            InvokeKind::Virtual | InvokeKind::Interface => {
                p.lookup_virtual.keys().any(|k| k.0 == mid)
            }
        };
        let lib = kind != InvokeKind::Static && p.libspec.iter().any(|e| e.mid == mid);
        if !found && !lib {
            d.at(
                m,
                pc,
                "unresolved-invoke",
                format!("{} call of `{mid}` resolves nowhere", kind.name()),
            );
        }
    }
}

fn callees<'p>(p: &'p Program, m: &Method) -> BTreeSet<&'p str> {
    let mut out = BTreeSet::new();
    for i in &m.body {
        let Some((kind, _, mid)) = i.invoke_args() else {
            continue;
        };
        match kind {
            InvokeKind::Static => out.extend(p.lookup_static.get(mid).map(String::as_str)),
            _ => {
                for t in [&p.lookup_direct, &p.lookup_super, &p.lookup_virtual] {
                    out.extend(
                        t.iter()
                            .filter(|(k, _)| k.0 == mid)
                            .map(|(_, l)| l.as_str()),
                    );
                }
            }
        }
    }
    out
}

/// Flag `rand` in methods the entry point reaches without passing through a
/// library-bound method.
pub fn static_rand_scan(p: &Program) -> Vec<Diagnostic> {
    let lib = p.libspec_methods();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut stack: Vec<&str> = p.entry().map(|m| m.label.as_str()).into_iter().collect();
    while let Some(l) = stack.pop() {
        if lib.contains(l) || !seen.insert(l) {
            continue;
        }
        if let Some(m) = p.methods.get(l) {
            stack.extend(callees(p, m));
        }
    }
    let mut d = Sink { p, out: vec![] };
    for l in seen {
        for (pc, i) in p.methods[l].body.iter().enumerate() {
            if matches!(i, Instr::Rand { .. }) {
                d.at(
                    l,
                    pc,
                    "rand-outside-library",
                    "random choice outside library code".into(),
                );
            }
        }
    }
    d.out
}
