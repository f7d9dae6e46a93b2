//! Unary, binary and relational operators over w-bit two's complement integers.

use crate::term::Bitstring;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Ushr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

impl UnOp {
    pub const ALL: [UnOp; 2] = [UnOp::Neg, UnOp::Not];

    pub fn name(self) -> &'static str {
        match self {
            UnOp::Neg => "neg",
            UnOp::Not => "not",
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            UnOp::Neg => "-",
            UnOp::Not => "~",
        }
    }

    pub fn eval(self, a: i64, w: u32) -> i64 {
        match self {
            UnOp::Neg => wrap(a.wrapping_neg(), w),
            UnOp::Not => wrap(!a, w),
        }
    }
}

impl BinOp {
    pub const ALL: [BinOp; 11] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Rem,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Shl,
        BinOp::Shr,
        BinOp::Ushr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
            BinOp::Rem => "rem",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Shl => "shl",
            BinOp::Shr => "shr",
            BinOp::Ushr => "ushr",
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::And => "&",
            BinOp::Or => "|",
            BinOp::Xor => "^",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
            BinOp::Ushr => ">>>",
        }
    }

    /// `None` for division or remainder by zero.
    pub fn eval(self, a: i64, b: i64, w: u32) -> Option<i64> {
        let shift = (b as u64 % w as u64) as u32;
        let r = match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Div => {
                if b == 0 {
                    return None;
                }
                a.wrapping_div(b)
            }
            BinOp::Rem => {
                if b == 0 {
                    return None;
                }
                a.wrapping_rem(b)
            }
            BinOp::And => a & b,
            BinOp::Or => a | b,
            BinOp::Xor => a ^ b,
            BinOp::Shl => a.wrapping_shl(shift),
            BinOp::Shr => a >> shift,
            BinOp::Ushr => ((a as u64 & mask(w)) >> shift) as i64,
        };
        Some(wrap(r, w))
    }
}

impl RelOp {
    pub const ALL: [RelOp; 6] = [
        RelOp::Eq,
        RelOp::Ne,
        RelOp::Lt,
        RelOp::Gt,
        RelOp::Le,
        RelOp::Ge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelOp::Eq => "eq",
            RelOp::Ne => "ne",
            RelOp::Lt => "lt",
            RelOp::Gt => "gt",
            RelOp::Le => "le",
            RelOp::Ge => "ge",
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            RelOp::Eq => "==",
            RelOp::Ne => "!=",
            RelOp::Lt => "<",
            RelOp::Gt => ">",
            RelOp::Le => "<=",
            RelOp::Ge => ">=",
        }
    }

    pub fn holds(self, a: i64, b: i64) -> bool {
        match self {
            RelOp::Eq => a == b,
            RelOp::Ne => a != b,
            RelOp::Lt => a < b,
            RelOp::Gt => a > b,
            RelOp::Le => a <= b,
            RelOp::Ge => a >= b,
        }
    }
}

macro_rules! op_text {
    ($t:ty) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|o| o.name() == s || o.symbol() == s)
                    .ok_or_else(|| format!("unknown operator `{s}`"))
            }
        }
    };
}

op_text!(UnOp);
op_text!(BinOp);
op_text!(RelOp);

pub fn mask(w: u32) -> u64 {
    if w >= 64 {
        u64::MAX
    } else {
        (1u64 << w) - 1
    }
}

/// Sign-extend the low `w` bits of `x`.
pub fn wrap(x: i64, w: u32) -> i64 {
    if w >= 64 {
        x
    } else {
        let s = 64 - w;
        (x << s) >> s
    }
}

pub fn min_value(w: u32) -> i64 {
    wrap(1i64 << (w.min(64) - 1), w)
}

pub fn max_value(w: u32) -> i64 {
    wrap(!min_value(w), w)
}

pub fn fits(x: i64, w: u32) -> bool {
    wrap(x, w) == x
}

pub fn num_to_bits(x: i64, w: u32) -> Bitstring {
    Bitstring::from_u64(x as u64, w as usize)
}

/// Two's complement reading of a bitstring of exactly `w` bits.
pub fn bits_to_num(b: &Bitstring, w: u32) -> Option<i64> {
    (b.len() == w as usize).then(|| wrap(b.to_u64() as i64, w))
}

/// All values of width `w`, ascending.
pub fn all_values(w: u32) -> impl Iterator<Item = i64> {
    assert!(w < 63);
    min_value(w)..=max_value(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wraparound_at_width_four() {
        assert_eq!(BinOp::Add.eval(7, 1, 4), Some(-8));
        assert_eq!(BinOp::Mul.eval(-8, -1, 4), Some(-8));
        assert_eq!(BinOp::Div.eval(3, 0, 4), None);
        assert_eq!(BinOp::Ushr.eval(-1, 1, 4), Some(7));
        assert_eq!(BinOp::Shr.eval(-2, 1, 4), Some(-1));
        assert_eq!(UnOp::Not.eval(0, 4), -1);
        assert_eq!(min_value(4), -8);
        assert_eq!(max_value(4), 7);
        assert_eq!(all_values(3).count(), 8);
    }

    #[test]
    fn names_and_symbols_parse() {
        assert_eq!("^".parse::<BinOp>().unwrap(), BinOp::Xor);
        assert_eq!("xor".parse::<BinOp>().unwrap(), BinOp::Xor);
        assert_eq!("<=".parse::<RelOp>().unwrap(), RelOp::Le);
        assert!("??".parse::<UnOp>().is_err());
    }

    proptest! {
        #[test]
        fn bits_round_trip(w in 2u32..=64, x in any::<i64>()) {
            let v = wrap(x, w);
            prop_assert_eq!(bits_to_num(&num_to_bits(v, w), w), Some(v));
        }

        #[test]
        fn results_stay_in_width(w in 2u32..=16, a in any::<i64>(), b in any::<i64>()) {
            let (a, b) = (wrap(a, w), wrap(b, w));
            for op in BinOp::ALL {
                if let Some(r) = op.eval(a, b, w) {
                    prop_assert!(fits(r, w));
                }
            }
        }
    }
}
