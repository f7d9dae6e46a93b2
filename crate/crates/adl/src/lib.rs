//! Abstract Dalvik Language toolkit: concrete, symbolic and split-state
//! semantics, CoSP protocol-tree embedding and bounded equivalence checking.

pub mod bytecode;
pub mod concrete;
pub mod cosp;
pub mod crypto;
pub mod deduction;
pub mod equiv;
pub mod machine;
pub mod ops;
pub mod prob;
pub mod split;
pub mod symbolic;
pub mod term;

use num_rational::BigRational;

pub use prob::{Dist, Outcome};

pub type ExactDist = Dist<BigRational>;
pub type McDist = Dist<f64>;
