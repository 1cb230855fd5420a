//! The inductive embedding step and the chain built from it, simulated in a finite factor M_n.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::rational_str;
use crate::stabilize::{k_constant, k_star_constant};

pub mod slot;
pub mod chain;
pub mod sparse;
pub mod step;
pub mod window;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rel {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
}

impl Rel {
    pub fn holds<T: PartialOrd>(self, lhs: &T, rhs: &T) -> bool {
        match self {
            Rel::Lt => lhs < rhs,
            Rel::Le => lhs <= rhs,
            Rel::Eq => lhs == rhs,
        }
    }
}

impl fmt::Display for Rel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rel::Lt => "<",
            Rel::Le => "≤",
            Rel::Eq => "=",
        })
    }
}

/// One asserted relation with both sides written exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub label: String,
    pub lhs: String,
    pub rel: Rel,
    pub rhs: String,
    pub holds: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checks {
    pub items: Vec<Check>,
}

impl Checks {
    /// Records lhs rel rhs; a false relation is recorded and returned as an assertion failure.
    pub fn check(&mut self, label: impl Into<String>, lhs: &BigRational, rel: Rel, rhs: &BigRational) -> Result<()> {
        let holds = rel.holds(lhs, rhs);
        self.record(label, rational_str::to_string(lhs), rel, rational_str::to_string(rhs), holds)
    }

    pub fn record(&mut self, label: impl Into<String>, lhs: String, rel: Rel, rhs: String, holds: bool) -> Result<()> {
        let label = label.into();
        let item = Check { label: label.clone(), lhs: lhs.clone(), rel, rhs: rhs.clone(), holds };
        self.items.push(item);
        if holds {
            Ok(())
        } else {
            Err(Error::Assertion(format!("{label}: {lhs} {rel} {rhs} fails")))
        }
    }

    pub fn all_hold(&self) -> bool {
        self.items.iter().all(|c| c.holds)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn extend(&mut self, o: Checks) {
        self.items.extend(o.items);
    }
}

/// ε = coeff / K(p), or coeff / K*(p) in *-mode. K(p) is never expanded for large p:
/// every bound the step needs has the form K(p)·ε·c.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Eps {
    #[serde(with = "rational_str")]
    pub coeff: BigRational,
    pub p: usize,
    pub star: bool,
}

/// Largest p for which K(p) is expanded when a concrete ε is requested.
pub const EXPAND_LIMIT: usize = 64;

impl Eps {
    /// Half the hypothesis bound (1/(48K(p)p²))(p/q − θ).
    pub fn half_bound(p: usize, gap: &BigRational, star: bool) -> Eps {
        Eps { coeff: Eps::bound_coeff(p, gap) / BigRational::from_integer(2.into()), p, star }
    }

    /// The coefficient c with bound = c / K(p).
    pub fn bound_coeff(p: usize, gap: &BigRational) -> BigRational {
        gap / BigRational::from_integer(BigInt::from(48) * BigInt::from(p) * BigInt::from(p))
    }

    pub fn constant(&self) -> Option<BigInt> {
        (self.p <= EXPAND_LIMIT).then(|| if self.star { k_star_constant(self.p) } else { k_constant(self.p) })
    }

    pub fn value(&self) -> Option<BigRational> {
        self.constant().map(|k| &self.coeff / BigRational::from_integer(k))
    }

    pub fn describe(&self) -> String {
        let k = if self.star { "K*" } else { "K" };
        format!("{}/{k}({})", rational_str::to_string(&self.coeff), self.p)
    }

    /// Records x < ε, expanding K(p) only when x is nonzero.
    pub fn check_below(&self, checks: &mut Checks, label: impl Into<String>, x: &BigRational) -> Result<()> {
        let holds = if x.is_zero() {
            self.coeff > BigRational::zero()
        } else {
            match self.value() {
                Some(v) => *x < v,
                None => return Err(Error::Precondition(format!("K({}) is too large to compare a nonzero distance", self.p))),
            }
        };
        checks.record(label, rational_str::to_string(x), Rel::Lt, self.describe(), holds)
    }
}
