use super::{name, NonceKind, SymOp, Term, TermError};

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

fn ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '@' | '.' | '$')
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, TermError> {
        Err(TermError::Parse {
            offset: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<&'a str, TermError> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if ident_char(c) {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        if start == self.pos {
            return self.err("expected identifier");
        }
        Ok(&self.src[start..self.pos])
    }

    fn nonce_marker(&mut self) -> Option<NonceKind> {
        match self.peek() {
            Some('!') => {
                self.pos += 1;
                Some(NonceKind::Protocol)
            }
            Some('?') => {
                self.pos += 1;
                Some(NonceKind::Attacker)
            }
            _ => None,
        }
    }

    fn finish(&mut self) -> Result<(), TermError> {
        self.skip_ws();
        if self.pos != self.src.len() {
            return self.err("trailing input");
        }
        Ok(())
    }
}

fn param_index(id: &str) -> Option<usize> {
    let digits = id.strip_prefix("x_")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok().filter(|&i| i >= 1)
}

enum Node {
    Param(usize),
    Nonce(String, NonceKind),
    App(String, Vec<Node>),
}

fn node(c: &mut Cursor<'_>, depth: usize) -> Result<Node, TermError> {
    if depth > 512 {
        return c.err("nesting too deep");
    }
    let id = c.ident()?;
    if id == "n" {
        if let Some(k) = c.nonce_marker() {
            let n = c.ident()?;
            return Ok(Node::Nonce(n.to_string(), k));
        }
    }
    if let Some(i) = param_index(id) {
        return Ok(Node::Param(i));
    }
    let mut args = Vec::new();
    if c.eat('(') {
        loop {
            args.push(node(c, depth + 1)?);
            if c.eat(',') {
                continue;
            }
            if c.eat(')') {
                break;
            }
            return c.err("expected `,` or `)`");
        }
    }
    Ok(Node::App(id.to_string(), args))
}

fn to_term(n: Node) -> Result<Term, String> {
    match n {
        Node::Param(i) => Err(format!("parameter x_{i} not allowed in a term")),
        Node::Nonce(s, k) => Ok(Term::Nonce(name(&s), k)),
        Node::App(f, args) => Ok(Term::app(
            &f,
            args.into_iter()
                .map(to_term)
                .collect::<Result<Vec<_>, _>>()?,
        )),
    }
}

fn to_symop(n: Node) -> SymOp {
    match n {
        Node::Param(i) => SymOp::Param(i),
        Node::Nonce(s, k) => SymOp::Nonce(name(&s), k),
        Node::App(f, args) => SymOp::App(name(&f), args.into_iter().map(to_symop).collect()),
    }
}

pub(super) fn parse_term(s: &str) -> Result<Term, TermError> {
    let mut c = Cursor { src: s, pos: 0 };
    let n = node(&mut c, 0)?;
    c.finish()?;
    to_term(n).map_err(|msg| TermError::Parse { offset: 0, msg })
}

pub(super) fn parse_symop(s: &str) -> Result<SymOp, TermError> {
    let mut c = Cursor { src: s, pos: 0 };
    let n = node(&mut c, 0)?;
    c.finish()?;
    Ok(to_symop(n))
}
