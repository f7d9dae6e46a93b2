use super::{Bitstring, Term};

/// ι: `emp` for the empty string, `string_b(ι(rest))` with the leftmost bit outermost.
pub fn iota_encode(b: &Bitstring) -> Term {
    b.bits()
        .iter()
        .rev()
        .fold(Term::constant("emp"), |acc, &bit| {
            Term::app(if bit { "string_1" } else { "string_0" }, vec![acc])
        })
}

pub fn iota_decode(t: &Term) -> Option<Bitstring> {
    let mut bits = Vec::new();
    let mut cur = t;
    loop {
        match cur {
            Term::App(f, args) if args.is_empty() && &**f == "emp" => return Some(Bitstring(bits)),
            Term::App(f, args) if args.len() == 1 && &**f == "string_0" => bits.push(false),
            Term::App(f, args) if args.len() == 1 && &**f == "string_1" => bits.push(true),
            _ => return None,
        }
        cur = &cur.args()[0];
    }
}

pub fn is_iota(t: &Term) -> bool {
    iota_decode(t).is_some()
}
