use super::*;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub code: &'static str,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: {} ({})",
            self.line, self.col, self.message, self.code
        )
    }
}

impl std::error::Error for ParseError {}

fn err(line: usize, code: &'static str, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        col: 1,
        code,
        message: message.into(),
    }
}

/// Drop a `#` comment, ignoring `#` inside string literals.
fn strip_comment(s: &str) -> &str {
    let mut in_str = false;
    let mut esc = false;
    for (i, c) in s.char_indices() {
        match c {
            _ if esc => esc = false,
            '\\' if in_str => esc = true,
            '"' => in_str = !in_str,
            '#' if !in_str => return &s[..i],
            _ => {}
        }
    }
    s
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_alphanumeric() || "_@.$<>".contains(c))
        && !s.starts_with(|c: char| c.is_ascii_digit())
}

impl Program {
    /// Insert a method and register the lookups implied by its label.
    pub fn add_method(&mut self, m: Method) {
        for (t, key) in implied_lookups(&m) {
            match t {
                LookupTable::Static => {
                    self.lookup_static
                        .entry(key.0)
                        .or_insert_with(|| m.label.clone());
                }
                LookupTable::Direct => {
                    self.lookup_direct
                        .entry(key)
                        .or_insert_with(|| m.label.clone());
                }
                LookupTable::Virtual => {
                    self.lookup_virtual
                        .entry(key)
                        .or_insert_with(|| m.label.clone());
                }
                LookupTable::Super => {}
            }
        }
        self.methods.insert(m.label.clone(), m);
    }
}

/// `static L` binds `L` statically; `C.m` binds `(m, C)` for direct and virtual calls.
pub(super) fn implied_lookups(m: &Method) -> Vec<(LookupTable, (String, String))> {
    if m.is_static {
        vec![(LookupTable::Static, (m.label.clone(), String::new()))]
    } else if let Some((cl, mid)) = m.label.rsplit_once('.') {
        let key = (mid.to_string(), cl.to_string());
        vec![
            (LookupTable::Direct, key.clone()),
            (LookupTable::Virtual, key),
        ]
    } else {
        vec![]
    }
}

struct Operands<'a> {
    line: usize,
    items: Vec<&'a str>,
    pos: usize,
}

impl<'a> Operands<'a> {
    fn new(line: usize, rest: &'a str) -> Result<Self, ParseError> {
        let mut items = Vec::new();
        let mut start = 0;
        let mut in_str = false;
        let mut esc = false;
        for (i, c) in rest.char_indices() {
            match c {
                _ if esc => esc = false,
                '\\' if in_str => esc = true,
                '"' => in_str = !in_str,
                ',' if !in_str => {
                    items.push(rest[start..i].trim());
                    start = i + 1;
                }
                _ => {}
            }
        }
        if in_str {
            return Err(err(line, "syntax", "unterminated string literal"));
        }
        let last = rest[start..].trim();
        if !last.is_empty() || !items.is_empty() {
            items.push(last);
        }
        Ok(Operands {
            line,
            items,
            pos: 0,
        })
    }

    fn next(&mut self) -> Result<&'a str, ParseError> {
        let s = self
            .items
            .get(self.pos)
            .copied()
            .ok_or_else(|| err(self.line, "syntax", "missing operand"))?;
        self.pos += 1;
        if s.is_empty() {
            return Err(err(self.line, "syntax", "empty operand"));
        }
        Ok(s)
    }

    fn reg(&mut self) -> Result<Reg, ParseError> {
        let s = self.next()?;
        s.strip_prefix('v')
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| {
                err(
                    self.line,
                    "syntax",
                    format!("expected register, found `{s}`"),
                )
            })
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        let s = self.next()?;
        s.parse().map_err(|_| {
            err(
                self.line,
                "syntax",
                format!("expected integer, found `{s}`"),
            )
        })
    }

    fn count(&mut self) -> Result<u32, ParseError> {
        let s = self.next()?;
        s.parse()
            .map_err(|_| err(self.line, "syntax", format!("expected count, found `{s}`")))
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        let s = self.next()?;
        if is_ident(s) {
            Ok(s.to_string())
        } else {
            Err(err(
                self.line,
                "syntax",
                format!("expected identifier, found `{s}`"),
            ))
        }
    }

    fn op<T: std::str::FromStr<Err = String>>(&mut self) -> Result<T, ParseError> {
        let s = self.next()?;
        s.parse().map_err(|e| err(self.line, "syntax", e))
    }

    fn string(&mut self) -> Result<String, ParseError> {
        let s = self.next()?;
        let inner = s
            .strip_prefix('"')
            .and_then(|r| r.strip_suffix('"'))
            .filter(|_| s.len() >= 2)
            .ok_or_else(|| {
                err(
                    self.line,
                    "syntax",
                    format!("expected string literal, found `{s}`"),
                )
            })?;
        let mut out = String::new();
        let mut chars = inner.chars();
        while let Some(c) = chars.next() {
            if c == '\\' {
                match chars.next() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some(e @ ('"' | '\\')) => out.push(e),
                    _ => return Err(err(self.line, "syntax", "bad escape in string literal")),
                }
            } else {
                out.push(c);
            }
        }
        Ok(out)
    }

    fn regs5(&mut self) -> Result<[Reg; 5], ParseError> {
        Ok([
            self.reg()?,
            self.reg()?,
            self.reg()?,
            self.reg()?,
            self.reg()?,
        ])
    }

    fn rest(&mut self) -> Vec<&'a str> {
        let r = self.items[self.pos..].to_vec();
        self.pos = self.items.len();
        r
    }

    fn finish(self) -> Result<(), ParseError> {
        if self.pos == self.items.len() {
            Ok(())
        } else {
            Err(err(self.line, "syntax", "too many operands"))
        }
    }
}

pub(super) fn parse_instr(line: usize, text: &str) -> Result<Instr, ParseError> {
    let text = text.trim();
    let (mnem, rest) = match text.find(char::is_whitespace) {
        Some(i) => (&text[..i], &text[i..]),
        None => (text, ""),
    };
    if mnem.contains("-wide") {
        return Ok(Instr::Wide {
            text: text.to_string(),
        });
    }
    let mut o = Operands::new(line, rest)?;
    let invoke_kind = |m: &str| {
        InvokeKind::ALL
            .into_iter()
            .find(|k| m == format!("invoke-{}", k.name()))
    };
    let i = match mnem {
        "move" => Instr::Move {
            a: o.reg()?,
            b: o.reg()?,
        },
        "const" => Instr::Const {
            a: o.reg()?,
            n: o.int()?,
        },
        "cmp" => Instr::Cmp {
            a: o.reg()?,
            b: o.reg()?,
            c: o.reg()?,
        },
        "unop" => Instr::Unop {
            a: o.reg()?,
            b: o.reg()?,
            op: o.op()?,
        },
        "binop" => Instr::Binop {
            a: o.reg()?,
            b: o.reg()?,
            c: o.reg()?,
            op: o.op()?,
        },
        "array-length" => Instr::ArrayLength {
            a: o.reg()?,
            b: o.reg()?,
        },
        "new-array" => Instr::NewArray {
            a: o.reg()?,
            b: o.reg()?,
        },
        "filled-new-array" => Instr::FilledNewArray {
            regs: o.regs5()?,
            n: o.count()?,
        },
        "filled-new-array-range" => Instr::FilledNewArrayRange {
            k: o.reg()?,
            n: o.count()?,
        },
        "fill-array-data" => {
            let a = o.reg()?;
            let data = o
                .rest()
                .into_iter()
                .map(|s| {
                    s.parse()
                        .map_err(|_| err(line, "syntax", format!("expected integer, found `{s}`")))
                })
                .collect::<Result<_, _>>()?;
            Instr::FillArrayData { a, data }
        }
        "aget" => Instr::Aget {
            a: o.reg()?,
            b: o.reg()?,
            c: o.reg()?,
        },
        "aput" => Instr::Aput {
            a: o.reg()?,
            b: o.reg()?,
            c: o.reg()?,
        },
        "nop" => Instr::Nop,
        "goto" => Instr::Goto { n: o.int()? },
        "if-test" => Instr::IfTest {
            a: o.reg()?,
            b: o.reg()?,
            n: o.int()?,
            op: o.op()?,
        },
        "if-testz" => Instr::IfTestz {
            a: o.reg()?,
            n: o.int()?,
            op: o.op()?,
        },
        "instance-of" => Instr::InstanceOf {
            a: o.reg()?,
            b: o.reg()?,
            cl: o.ident()?,
        },
        "new-instance" => Instr::NewInstance {
            a: o.reg()?,
            cl: o.ident()?,
        },
        "const-string" => Instr::ConstString {
            a: o.reg()?,
            s: o.string()?,
        },
        "const-class" => Instr::ConstClass {
            a: o.reg()?,
            cl: o.ident()?,
        },
        "iget" => Instr::Iget {
            a: o.reg()?,
            b: o.reg()?,
            fid: o.ident()?,
        },
        "iput" => Instr::Iput {
            a: o.reg()?,
            b: o.reg()?,
            fid: o.ident()?,
        },
        "sget" => Instr::Sget {
            a: o.reg()?,
            fid: o.ident()?,
        },
        "sput" => Instr::Sput {
            a: o.reg()?,
            fid: o.ident()?,
        },
        "move-result" => Instr::MoveResult { a: o.reg()? },
        "return-void" => Instr::ReturnVoid,
        "return" => Instr::Return { a: o.reg()? },
        "rand" => Instr::Rand { a: o.reg()? },
        m => {
            if let Some(kind) = m.strip_suffix("-range").and_then(invoke_kind) {
                Instr::InvokeRange {
                    kind,
                    k: o.reg()?,
                    n: o.count()?,
                    mid: o.ident()?,
                }
            } else if let Some(kind) = invoke_kind(m) {
                Instr::Invoke {
                    kind,
                    regs: o.regs5()?,
                    n: o.count()?,
                    mid: o.ident()?,
                }
            } else {
                return Err(err(
                    line,
                    "unknown-mnemonic",
                    format!("unknown instruction `{m}`"),
                ));
            }
        }
    };
    o.finish()?;
    Ok(i)
}

fn parse_atom(line: usize, s: &str) -> Result<Atom, ParseError> {
    let s = s.trim();
    if let Some(f) = s.strip_prefix("has ") {
        let f = f.trim();
        if is_ident(f) {
            return Ok(Atom::Has(f.to_string()));
        }
    } else if let Some((f, v)) = s.split_once('=') {
        let (f, v) = (f.trim(), v.trim());
        if let (true, Ok(v)) = (is_ident(f), v.parse()) {
            return Ok(Atom::FieldEq(f.to_string(), v));
        }
    }
    Err(err(line, "syntax", format!("bad predicate atom `{s}`")))
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Parse the assembly format.
pub fn parse(src: &str) -> Result<Program, ParseError> {
    parse_lines(src).map_err(|mut e| {
        if let Some(l) = src.lines().nth(e.line.saturating_sub(1)) {
            e.col = l.len() - l.trim_start().len() + 1;
        }
        e
    })
}

fn parse_lines(src: &str) -> Result<Program, ParseError> {
    let mut p = Program::default();
    let mut explicit: Vec<(usize, LookupTable, String, String, String)> = Vec::new();
    let mut current: Option<(Method, Vec<usize>)> = None;
    let mut methods: Vec<(usize, Method, Vec<usize>)> = Vec::new();

    for (idx, raw) in src.lines().enumerate() {
        let line = idx + 1;
        let text = strip_comment(raw).trim();
        if text.is_empty() {
            continue;
        }
        if let Some((m, lines)) = current.as_mut() {
            if text == "}" {
                let (m, lines) = current.take().expect("open method");
                methods.push((line, m, lines));
            } else {
                m.body.push(parse_instr(line, text)?);
                lines.push(line);
            }
            continue;
        }
        let w = words(text);
        match w[0] {
            ".model" => {
                if w.len() != 2 || !is_ident(w[1]) {
                    return Err(err(line, "syntax", "expected `.model NAME`"));
                }
                p.models.push(w[1].to_string());
            }
            ".class" => {
                if w.len() != 2 || !is_ident(w[1]) {
                    return Err(err(line, "syntax", "expected `.class NAME`"));
                }
                if !p.classes.insert(w[1].to_string()) {
                    return Err(err(
                        line,
                        "duplicate",
                        format!("class `{}` declared twice", w[1]),
                    ));
                }
            }
            ".field" => {
                let (is_static, fid) = match w.as_slice() {
                    [_, "static", f] => (true, *f),
                    [_, f] => (false, *f),
                    _ => return Err(err(line, "syntax", "expected `.field [static] Class.name`")),
                };
                let (class, name) = fid
                    .rsplit_once('.')
                    .filter(|(c, n)| is_ident(c) && is_ident(n))
                    .ok_or_else(|| err(line, "syntax", "field id must be `Class.name`"))?;
                let d = FieldDecl {
                    class: class.into(),
                    name: name.into(),
                    is_static,
                };
                if p.fields.insert(fid.to_string(), d).is_some() {
                    return Err(err(
                        line,
                        "duplicate",
                        format!("field `{fid}` declared twice"),
                    ));
                }
            }
            ".mal" => {
                let [_, kind, decl] = w.as_slice() else {
                    return Err(err(line, "syntax", "expected `.mal KIND name/arity`"));
                };
                let kind = match *kind {
                    "virtual" => MalKind::Virtual,
                    "static" => MalKind::Static,
                    "super" => MalKind::Super,
                    "direct" => MalKind::Direct,
                    k => return Err(err(line, "syntax", format!("unknown malicious kind `{k}`"))),
                };
                let (name, arity) = decl
                    .split_once('/')
                    .and_then(|(n, a)| Some((n, a.parse().ok()?)))
                    .filter(|(n, _)| is_ident(n))
                    .ok_or_else(|| err(line, "syntax", "expected `name/arity`"))?;
                if p.mal.insert(name.into(), MalDecl { kind, arity }).is_some() {
                    return Err(err(
                        line,
                        "duplicate",
                        format!("malicious method `{name}` declared twice"),
                    ));
                }
            }
            ".symop" => {
                let body = text[".symop".len()..].trim();
                let (name, tree) = body
                    .split_once('=')
                    .map(|(n, t)| (n.trim(), t.trim()))
                    .filter(|(n, _)| is_ident(n))
                    .ok_or_else(|| err(line, "syntax", "expected `.symop NAME = TREE`"))?;
                let op = SymOp::parse(tree).map_err(|e| err(line, "syntax", e.to_string()))?;
                if p.symops.insert(name.into(), op).is_some() {
                    return Err(err(
                        line,
                        "duplicate",
                        format!("symbolic operation `{name}` declared twice"),
                    ));
                }
            }
            ".lookup" => {
                let (table, mid, cl, label) = match w.as_slice() {
                    [_, "static", mid, "->", label] => (LookupTable::Static, *mid, "", *label),
                    [_, t, target, "->", label] => {
                        let t = match *t {
                            "direct" => LookupTable::Direct,
                            "super" => LookupTable::Super,
                            "virtual" => LookupTable::Virtual,
                            t => {
                                return Err(err(
                                    line,
                                    "syntax",
                                    format!("unknown lookup table `{t}`"),
                                ))
                            }
                        };
                        let (cl, mid) = target
                            .rsplit_once('.')
                            .ok_or_else(|| err(line, "syntax", "lookup key must be `Class.mid`"))?;
                        (t, mid, cl, *label)
                    }
                    _ => {
                        return Err(err(
                            line,
                            "syntax",
                            "expected `.lookup TABLE [Class.]mid -> label`",
                        ))
                    }
                };
                explicit.push((line, table, mid.into(), cl.into(), label.into()));
            }
            ".libspec" => {
                let body = text[".libspec".len()..].trim();
                let (lhs, symop) = body
                    .split_once("=>")
                    .ok_or_else(|| err(line, "syntax", "expected `=>` in `.libspec`"))?;
                let symop = symop.trim();
                let (target, when) = match lhs.split_once(" when ") {
                    Some((t, c)) => (t.trim(), Some(c.trim())),
                    None => (lhs.trim(), None),
                };
                let (class, mid) = target
                    .rsplit_once('.')
                    .filter(|(c, m)| is_ident(c) && is_ident(m))
                    .ok_or_else(|| err(line, "syntax", "library target must be `Class.method`"))?;
                let when = match when {
                    None | Some("true") => vec![],
                    Some(c) => c
                        .split(" and ")
                        .map(|a| parse_atom(line, a))
                        .collect::<Result<_, _>>()?,
                };
                if !is_ident(symop) {
                    return Err(err(line, "syntax", "expected symbolic operation name"));
                }
                p.libspec.push(LibEntry {
                    class: class.into(),
                    mid: mid.into(),
                    when,
                    symop: symop.into(),
                });
            }
            ".method" => {
                let (is_static, label) = match w.as_slice() {
                    [_, "static", l, "{"] => (true, *l),
                    [_, l, "{"] => (false, *l),
                    _ => return Err(err(line, "syntax", "expected `.method [static] LABEL {`")),
                };
                if !is_ident(label) {
                    return Err(err(line, "syntax", format!("bad method label `{label}`")));
                }
                current = Some((
                    Method {
                        label: label.into(),
                        is_static,
                        body: vec![],
                    },
                    vec![],
                ));
            }
            d => return Err(err(line, "syntax", format!("unexpected `{d}`"))),
        }
    }
    if current.is_some() {
        return Err(err(src.lines().count(), "syntax", "unterminated method"));
    }
    for (line, table, mid, cl, label) in explicit {
        let dup = match table {
            LookupTable::Static => p.lookup_static.insert(mid, label).is_some(),
            LookupTable::Direct => p.lookup_direct.insert((mid, cl), label).is_some(),
            LookupTable::Super => p.lookup_super.insert((mid, cl), label).is_some(),
            LookupTable::Virtual => p.lookup_virtual.insert((mid, cl), label).is_some(),
        };
        if dup {
            return Err(err(line, "duplicate", "lookup entry defined twice"));
        }
    }
    for (line, m, lines) in methods {
        if p.methods.contains_key(&m.label) {
            return Err(err(
                line,
                "duplicate",
                format!("method `{}` defined twice", m.label),
            ));
        }
        p.source.0.insert(m.label.clone(), lines);
        p.add_method(m);
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_strings() {
        let p = parse(
            "# header\n.method static main { # trailing\n const-string v0, \"a#b,\\\"c\"\n return v0\n}\n",
        )
        .unwrap();
        assert_eq!(
            p.methods["main"].body[0],
            Instr::ConstString {
                a: 0,
                s: "a#b,\"c".into()
            }
        );
        assert_eq!(p.line_of("main", 1), Some(4));
    }

    #[test]
    fn implied_and_explicit_lookups() {
        let p = parse(
            ".class C\n.lookup virtual C.run -> other\n.method C.run {\n return-void\n}\n.method other {\n return-void\n}\n",
        )
        .unwrap();
        assert_eq!(p.lookup_direct[&("run".into(), "C".into())], "C.run");
        assert_eq!(p.lookup_virtual[&("run".into(), "C".into())], "other");
    }

    #[test]
    fn errors_carry_line_and_code() {
        let e = parse(".method static main {\n frobnicate v0\n}\n").unwrap_err();
        assert_eq!((e.line, e.code), (2, "unknown-mnemonic"));
        let e = parse(".class A\n.class A\n").unwrap_err();
        assert_eq!((e.line, e.code), (2, "duplicate"));
        let e = parse(".method static main {\n move v0\n}\n").unwrap_err();
        assert_eq!(e.code, "syntax");
    }

    #[test]
    fn wide_forms_are_kept() {
        let i = parse_instr(1, "move-wide v0, v2").unwrap();
        assert!(matches!(i, Instr::Wide { .. }));
    }

    #[test]
    fn libspec_predicates() {
        let p = parse(".libspec Cipher.doFinal when mode=1 and has key => encrypt\n").unwrap();
        assert_eq!(
            p.libspec[0].when,
            vec![Atom::FieldEq("mode".into(), 1), Atom::Has("key".into())]
        );
    }
}
