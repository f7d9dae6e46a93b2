//! Finite distributions over execution outcomes, generic over the scalar.

use crate::machine::Value;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::ops::Add;

/// How an execution ended.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    /// The program returned without an attacker.
    Value(Value),
    /// The attacker produced a token in ADVR.
    Adv(String),
    Timeout,
    Stuck(String),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Value(v) => write!(f, "value {v}"),
            Outcome::Adv(t) => write!(f, "adv {t}"),
            Outcome::Timeout => f.write_str("timeout"),
            Outcome::Stuck(r) => write!(f, "stuck {r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dist<P> {
    pub probs: BTreeMap<Outcome, P>,
}

impl<P> Default for Dist<P> {
    fn default() -> Self {
        Dist {
            probs: BTreeMap::new(),
        }
    }
}

impl<P: Clone + Zero + One + Add<Output = P>> Dist<P> {
    pub fn dirac(o: Outcome) -> Self {
        let mut d = Dist::default();
        d.add(o, P::one());
        d
    }

    pub fn add(&mut self, o: Outcome, p: P) {
        if p.is_zero() {
            return;
        }
        let e = self.probs.entry(o).or_insert_with(P::zero);
        *e = e.clone() + p;
    }

    pub fn get(&self, o: &Outcome) -> P {
        self.probs.get(o).cloned().unwrap_or_else(P::zero)
    }

    pub fn total(&self) -> P {
        self.probs.values().cloned().fold(P::zero(), |a, b| a + b)
    }
}

impl Dist<BigRational> {
    pub fn to_f64(&self) -> Dist<f64> {
        Dist {
            probs: self
                .probs
                .iter()
                .map(|(k, v)| (k.clone(), v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }
}

impl Dist<f64> {
    /// Total variation distance.
    pub fn tv(&self, other: &Dist<f64>) -> f64 {
        let keys: std::collections::BTreeSet<_> =
            self.probs.keys().chain(other.probs.keys()).collect();
        keys.into_iter()
            .map(|k| (self.get(k) - other.get(k)).abs())
            .sum::<f64>()
            / 2.0
    }
}

impl<P: fmt::Display> fmt::Display for Dist<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (o, p) in &self.probs {
            writeln!(f, "{o}\t{p}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;

    #[test]
    fn exact_mass_and_tv() {
        let half = BigRational::new(BigInt::from(1), BigInt::from(2));
        let mut d: Dist<BigRational> = Dist::default();
        d.add(Outcome::Value(Value::Num(0)), half.clone());
        d.add(Outcome::Value(Value::Num(1)), half.clone());
        assert!(d.total().is_one());
        let e = Dist::<f64>::dirac(Outcome::Value(Value::Num(0)));
        assert!((d.to_f64().tv(&e) - 0.5).abs() < 1e-12);
    }
}
