use super::parse::implied_lookups;
use super::*;
use std::fmt::{self, Write};

fn quote(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn regs(r: &[Reg]) -> String {
    r.iter()
        .map(|r| format!("v{r}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instr::Move { a, b } => write!(f, "move v{a}, v{b}"),
            Instr::Const { a, n } => write!(f, "const v{a}, {n}"),
            Instr::Cmp { a, b, c } => write!(f, "cmp v{a}, v{b}, v{c}"),
            Instr::Unop { a, b, op } => write!(f, "unop v{a}, v{b}, {op}"),
            Instr::Binop { a, b, c, op } => write!(f, "binop v{a}, v{b}, v{c}, {op}"),
            Instr::ArrayLength { a, b } => write!(f, "array-length v{a}, v{b}"),
            Instr::NewArray { a, b } => write!(f, "new-array v{a}, v{b}"),
            Instr::FilledNewArray { regs: r, n } => write!(f, "filled-new-array {}, {n}", regs(r)),
            Instr::FilledNewArrayRange { k, n } => write!(f, "filled-new-array-range v{k}, {n}"),
            Instr::FillArrayData { a, data } => {
                write!(f, "fill-array-data v{a}")?;
                for d in data {
                    write!(f, ", {d}")?;
                }
                Ok(())
            }
            Instr::Aget { a, b, c } => write!(f, "aget v{a}, v{b}, v{c}"),
            Instr::Aput { a, b, c } => write!(f, "aput v{a}, v{b}, v{c}"),
            Instr::Nop => f.write_str("nop"),
            Instr::Goto { n } => write!(f, "goto {n}"),
            Instr::IfTest { a, b, n, op } => write!(f, "if-test v{a}, v{b}, {n}, {op}"),
            Instr::IfTestz { a, n, op } => write!(f, "if-testz v{a}, {n}, {op}"),
            Instr::InstanceOf { a, b, cl } => write!(f, "instance-of v{a}, v{b}, {cl}"),
            Instr::NewInstance { a, cl } => write!(f, "new-instance v{a}, {cl}"),
            Instr::ConstString { a, s } => write!(f, "const-string v{a}, {}", quote(s)),
            Instr::ConstClass { a, cl } => write!(f, "const-class v{a}, {cl}"),
            Instr::Iget { a, b, fid } => write!(f, "iget v{a}, v{b}, {fid}"),
            Instr::Iput { a, b, fid } => write!(f, "iput v{a}, v{b}, {fid}"),
            Instr::Sget { a, fid } => write!(f, "sget v{a}, {fid}"),
            Instr::Sput { a, fid } => write!(f, "sput v{a}, {fid}"),
            Instr::Invoke {
                kind,
                regs: r,
                n,
                mid,
            } => {
                write!(f, "invoke-{} {}, {n}, {mid}", kind.name(), regs(r))
            }
            Instr::InvokeRange { kind, k, n, mid } => {
                write!(f, "invoke-{}-range v{k}, {n}, {mid}", kind.name())
            }
            Instr::MoveResult { a } => write!(f, "move-result v{a}"),
            Instr::ReturnVoid => f.write_str("return-void"),
            Instr::Return { a } => write!(f, "return v{a}"),
            Instr::Rand { a } => write!(f, "rand v{a}"),
            Instr::Wide { text } => f.write_str(text),
        }
    }
}

fn atom(a: &Atom) -> String {
    match a {
        Atom::FieldEq(f, v) => format!("{f}={v}"),
        Atom::Has(f) => format!("has {f}"),
    }
}

/// Canonical text: parsing it yields an equal program.
pub(super) fn render(p: &Program) -> String {
    let mut s = String::new();
    for m in &p.models {
        let _ = writeln!(s, ".model {m}");
    }
    for c in &p.classes {
        let _ = writeln!(s, ".class {c}");
    }
    for (fid, d) in &p.fields {
        let st = if d.is_static { "static " } else { "" };
        let _ = writeln!(s, ".field {st}{fid}");
    }
    for (name, d) in &p.mal {
        let _ = writeln!(s, ".mal {} {name}/{}", d.kind.name(), d.arity);
    }
    for (name, op) in &p.symops {
        let _ = writeln!(s, ".symop {name} = {op}");
    }
    let mut implied: BTreeSet<(LookupTable, (String, String), String)> = BTreeSet::new();
    for m in p.methods.values() {
        for (t, k) in implied_lookups(m) {
            implied.insert((t, k, m.label.clone()));
        }
    }
    let emit = |t: LookupTable, key: (String, String), label: &String, s: &mut String| {
        if implied.contains(&(t, key.clone(), label.clone())) {
            return;
        }
        match t {
            LookupTable::Static => {
                let _ = writeln!(s, ".lookup static {} -> {label}", key.0);
            }
            _ => {
                let _ = writeln!(s, ".lookup {} {}.{} -> {label}", t.name(), key.1, key.0);
            }
        }
    };
    for (mid, l) in &p.lookup_static {
        emit(LookupTable::Static, (mid.clone(), String::new()), l, &mut s);
    }
    for (t, table) in [
        (LookupTable::Direct, &p.lookup_direct),
        (LookupTable::Super, &p.lookup_super),
        (LookupTable::Virtual, &p.lookup_virtual),
    ] {
        for (k, l) in table {
            emit(t, k.clone(), l, &mut s);
        }
    }
    for e in &p.libspec {
        let when = if e.when.is_empty() {
            String::new()
        } else {
            format!(
                " when {}",
                e.when.iter().map(atom).collect::<Vec<_>>().join(" and ")
            )
        };
        let _ = writeln!(s, ".libspec {}.{}{when} => {}", e.class, e.mid, e.symop);
    }
    for m in p.methods.values() {
        let st = if m.is_static { "static " } else { "" };
        let _ = writeln!(s, "\n.method {st}{} {{", m.label);
        for i in &m.body {
            let _ = writeln!(s, "    {i}");
        }
        s.push_str("}\n");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reg() -> impl Strategy<Value = Reg> {
        0u32..16
    }

    fn ident() -> impl Strategy<Value = String> {
        "[A-Za-z][A-Za-z0-9_]{0,6}"
    }

    fn instr() -> impl Strategy<Value = Instr> {
        let kind = prop::sample::select(InvokeKind::ALL.to_vec());
        prop_oneof![
            (reg(), reg()).prop_map(|(a, b)| Instr::Move { a, b }),
            (reg(), any::<i64>()).prop_map(|(a, n)| Instr::Const { a, n }),
            (reg(), reg(), reg()).prop_map(|(a, b, c)| Instr::Cmp { a, b, c }),
            (reg(), reg(), prop::sample::select(UnOp::ALL.to_vec()))
                .prop_map(|(a, b, op)| Instr::Unop { a, b, op }),
            (
                reg(),
                reg(),
                reg(),
                prop::sample::select(BinOp::ALL.to_vec())
            )
                .prop_map(|(a, b, c, op)| Instr::Binop { a, b, c, op }),
            (prop::array::uniform5(reg()), 0u32..=5)
                .prop_map(|(regs, n)| Instr::FilledNewArray { regs, n }),
            (reg(), prop::collection::vec(any::<i64>(), 0..4))
                .prop_map(|(a, data)| Instr::FillArrayData { a, data }),
            Just(Instr::Nop),
            any::<i64>().prop_map(|n| Instr::Goto { n }),
            (
                reg(),
                reg(),
                -5i64..5,
                prop::sample::select(RelOp::ALL.to_vec())
            )
                .prop_map(|(a, b, n, op)| Instr::IfTest { a, b, n, op }),
            (reg(), any::<String>()).prop_map(|(a, s)| Instr::ConstString { a, s }),
            (reg(), reg(), ident()).prop_map(|(a, b, cl)| Instr::Iget {
                a,
                b,
                fid: format!("{cl}.f")
            }),
            (
                kind.clone(),
                prop::array::uniform5(reg()),
                0u32..=5,
                ident()
            )
                .prop_map(|(kind, regs, n, mid)| Instr::Invoke { kind, regs, n, mid }),
            (kind, reg(), 0u32..5, ident()).prop_map(|(kind, k, n, mid)| Instr::InvokeRange {
                kind,
                k,
                n,
                mid
            }),
            reg().prop_map(|a| Instr::Rand { a }),
            Just(Instr::ReturnVoid),
        ]
    }

    proptest! {
        #[test]
        fn parse_inverts_render(
            bodies in prop::collection::vec(prop::collection::vec(instr(), 1..8), 1..4),
            classes in prop::collection::btree_set(ident(), 0..3),
        ) {
            let mut p = Program::default();
            p.classes = classes;
            for (i, body) in bodies.into_iter().enumerate() {
                let label = if i == 0 { "main".to_string() } else { format!("C{i}.m") };
                p.add_method(Method { label, is_static: i == 0, body });
            }
            p.lookup_super.insert(("m".into(), "C1".into()), "main".into());
            let back = parse(&p.render()).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
