//! Instance model: finite-support reward laws, boxes with time-indexed
//! costs and rewards, value discounting, and the exact distribution algebra
//! everything downstream is built on.
//!
//! Rounds are 1-based (`t ∈ 1..=H`); box indices are 0-based.

use std::fmt;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{format_rational, Rational};

/// A nonnegative reward law with finitely many atoms.
///
/// Atoms are kept sorted by strictly increasing value, every probability is
/// positive, and the probabilities sum to exactly one.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DiscreteDistribution {
    atoms: Vec<(Rational, Rational)>,
}

impl DiscreteDistribution {
    /// Builds a law from `(value, probability)` pairs. Equal values are merged
    /// and zero-probability atoms dropped.
    pub fn new(atoms: impl IntoIterator<Item = (Rational, Rational)>) -> Result<Self> {
        let mut atoms: Vec<(Rational, Rational)> = atoms.into_iter().collect();
        for (v, p) in &atoms {
            if v.is_negative() {
                return Err(Error::Structural(format!("negative support value {}", format_rational(v))));
            }
            if p.is_negative() || *p > Rational::one() {
                return Err(Error::Structural(format!("probability {} outside [0,1]", format_rational(p))));
            }
        }
        atoms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut merged: Vec<(Rational, Rational)> = Vec::with_capacity(atoms.len());
        for (v, p) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += p,
                _ => merged.push((v, p)),
            }
        }
        merged.retain(|(_, p)| !p.is_zero());
        let total: Rational = merged.iter().map(|(_, p)| p.clone()).sum();
        if total != Rational::one() {
            return Err(Error::Structural(format!(
                "probabilities sum to {}, expected 1",
                format_rational(&total)
            )));
        }
        Ok(Self { atoms: merged })
    }

    pub fn point(value: Rational) -> Self {
        assert!(!value.is_negative(), "point mass at a negative value");
        Self { atoms: vec![(value, Rational::one())] }
    }

    pub fn atoms(&self) -> &[(Rational, Rational)] {
        &self.atoms
    }

    pub fn support_len(&self) -> usize {
        self.atoms.len()
    }

    pub fn expectation(&self) -> Rational {
        self.atoms.iter().map(|(v, p)| v * p).sum()
    }

    pub fn max_value(&self) -> &Rational {
        &self.atoms.last().expect("distribution has at least one atom").0
    }

    /// `P(V > v)`.
    pub fn tail(&self, v: &Rational) -> Rational {
        self.atoms.iter().filter(|(x, _)| x > v).map(|(_, p)| p.clone()).sum()
    }

    /// `E[(V - r)^+]`.
    pub fn excess(&self, r: &Rational) -> Rational {
        self.atoms
            .iter()
            .filter(|(x, _)| x > r)
            .map(|(x, p)| (x - r) * p)
            .sum()
    }

    /// Law of `min(V, cap)`; caps below zero clamp to zero.
    pub fn capped(&self, cap: &Rational) -> Self {
        let cap = if cap.is_negative() { Rational::zero() } else { cap.clone() };
        let atoms = self.atoms.iter().map(|(v, p)| (v.clone().min(cap.clone()), p.clone()));
        Self::new(atoms).expect("capping preserves validity")
    }

    /// Probability of the atom at exactly `v`.
    pub fn prob_of(&self, v: &Rational) -> Rational {
        self.atoms
            .iter()
            .find(|(x, _)| x == v)
            .map(|(_, p)| p.clone())
            .unwrap_or_else(Rational::zero)
    }
}

/// Law of `min(V, cap)`.
pub fn capped(dist: &DiscreteDistribution, cap: &Rational) -> DiscreteDistribution {
    dist.capped(cap)
}

/// `E[max_e X_e]` where element `e` is present independently with
/// probability `inclusion_probs[e]` and, when present, draws `X_e ~ dists[e]`.
/// The max over an empty set is 0.
pub fn expectation_of_max(dists: &[&DiscreteDistribution], inclusion_probs: &[Rational]) -> Result<Rational> {
    if dists.len() != inclusion_probs.len() {
        return Err(Error::Structural(format!(
            "{} distributions but {} inclusion probabilities",
            dists.len(),
            inclusion_probs.len()
        )));
    }
    for q in inclusion_probs {
        if q.is_negative() || *q > Rational::one() {
            return Err(Error::Structural(format!("inclusion probability {} outside [0,1]", format_rational(q))));
        }
    }
    let mut points: Vec<Rational> = std::iter::once(Rational::zero())
        .chain(dists.iter().flat_map(|d| d.atoms().iter().map(|(v, _)| v.clone())))
        .collect();
    points.sort();
    points.dedup();

    // E[M] = sum_k (v_{k+1} - v_k) * P(M > v_k), with P(M <= v) = prod_e (1 - q_e P(X_e > v)).
    let mut total = Rational::zero();
    for w in points.windows(2) {
        let (lo, hi) = (&w[0], &w[1]);
        let mut below = Rational::one();
        for (d, q) in dists.iter().zip(inclusion_probs) {
            below *= Rational::one() - q * d.tail(lo);
            if below.is_zero() {
                break;
            }
        }
        total += (hi - lo) * (Rational::one() - below);
    }
    Ok(total)
}

/// How a realized reward deteriorates between inspection and collection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscountRule {
    Identity,
    /// Full value at the inspection round, nothing afterwards.
    Commit,
    /// Multiply by `factor` per elapsed round.
    Multiplicative {
        #[serde(with = "crate::rational::serde_rational")]
        factor: Rational,
    },
    /// Explicit multiplier per elapsed round; rounds past the end reuse the last entry.
    Table {
        #[serde(serialize_with = "crate::rational::serde_rational_vec::serialize", deserialize_with = "deserialize_multipliers")]
        multipliers: Vec<Rational>,
    },
}

fn deserialize_multipliers<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<Rational>, D::Error> {
    let raw = Vec::<serde_json::Value>::deserialize(d)?;
    raw.iter()
        .map(crate::rational::serde_rational::from_json_value)
        .collect::<Result<Vec<_>>>()
        .map_err(serde::de::Error::custom)
}

impl DiscountRule {
    pub fn multiplier(&self, elapsed: usize) -> Rational {
        match self {
            DiscountRule::Identity => Rational::one(),
            DiscountRule::Commit => {
                if elapsed == 0 {
                    Rational::one()
                } else {
                    Rational::zero()
                }
            }
            DiscountRule::Multiplicative { factor } => num_traits::pow(factor.clone(), elapsed),
            DiscountRule::Table { multipliers } => match multipliers.len() {
                0 => Rational::one(),
                len => multipliers[elapsed.min(len - 1)].clone(),
            },
        }
    }

    /// Value collectable `elapsed` rounds after a reward of `value` was revealed.
    pub fn apply(&self, value: &Rational, elapsed: usize) -> Rational {
        if elapsed == 0 {
            return value.clone();
        }
        value * self.multiplier(elapsed)
    }

    pub fn is_identity(&self) -> bool {
        match self {
            DiscountRule::Identity => true,
            DiscountRule::Commit => false,
            DiscountRule::Multiplicative { factor } => factor.is_one(),
            DiscountRule::Table { multipliers } => multipliers.iter().all(|m| m.is_one()),
        }
    }

    fn violations(&self, field: &str, out: &mut Vec<Violation>) {
        let unit = |m: &Rational| !m.is_negative() && *m <= Rational::one();
        match self {
            DiscountRule::Identity | DiscountRule::Commit => {}
            DiscountRule::Multiplicative { factor } => {
                if !unit(factor) {
                    out.push(Violation::new(field, "multiplicative factor must lie in [0,1]"));
                }
            }
            DiscountRule::Table { multipliers } => {
                if multipliers.first().map_or(true, |m| !m.is_one()) {
                    out.push(Violation::new(field, "discount at elapsed 0 must be the identity"));
                }
                if multipliers.iter().any(|m| !unit(m)) {
                    out.push(Violation::new(field, "discount multipliers must lie in [0,1]"));
                }
                if multipliers.windows(2).any(|w| w[1] > w[0]) {
                    out.push(Violation::new(field, "discount must be non-increasing in elapsed rounds"));
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoxSpec {
    /// `cost[t-1]`; `None` means the box cannot be inspected at round `t`.
    pub cost: Vec<Option<Rational>>,
    pub processing_time: usize,
    /// `rewards[t-1]` is the law of a reward revealed at round `t`.
    pub rewards: Vec<DiscreteDistribution>,
    pub discount: DiscountRule,
}

impl BoxSpec {
    /// A box whose cost and reward law do not depend on time.
    pub fn constant(
        cost: Option<Rational>,
        processing_time: usize,
        reward: DiscreteDistribution,
        discount: DiscountRule,
        horizon: usize,
    ) -> Self {
        Self {
            cost: vec![cost; horizon],
            processing_time,
            rewards: vec![reward; horizon],
            discount,
        }
    }

    pub fn cost_at(&self, t: usize) -> Option<&Rational> {
        if t == 0 {
            return None;
        }
        self.cost.get(t - 1).and_then(|c| c.as_ref())
    }

    pub fn reward_at(&self, t: usize) -> &DiscreteDistribution {
        assert!(t >= 1, "rounds are 1-based");
        &self.rewards[(t - 1).min(self.rewards.len() - 1)]
    }

    pub fn is_time_invariant(&self) -> bool {
        self.cost.windows(2).all(|w| w[0] == w[1]) && self.rewards.windows(2).all(|w| w[0] == w[1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    General,
    /// Every processing time is zero.
    Instant,
    /// Costs and reward laws are constant in time.
    Fixed,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::General => "general",
            Variant::Instant => "instant",
            Variant::Fixed => "fixed",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub boxes: Vec<BoxSpec>,
    pub horizon: usize,
    pub variant: Variant,
}

/// One broken invariant, naming the offending field and the rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self { field: field.into(), rule: rule.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

impl Instance {
    pub fn new(boxes: Vec<BoxSpec>, horizon: usize, variant: Variant) -> Self {
        Self { boxes, horizon, variant }
    }

    /// Like [`Instance::new`] but rejects instances with violations.
    pub fn checked(boxes: Vec<BoxSpec>, horizon: usize, variant: Variant) -> Result<Self> {
        let inst = Self::new(boxes, horizon, variant);
        inst.ensure_valid()?;
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.boxes.len()
    }

    pub fn total_processing(&self) -> usize {
        self.boxes.iter().map(|b| b.processing_time).sum()
    }

    pub fn max_processing(&self) -> usize {
        self.boxes.iter().map(|b| b.processing_time).max().unwrap_or(0)
    }

    pub fn max_support(&self) -> usize {
        self.boxes
            .iter()
            .flat_map(|b| b.rewards.iter().map(|d| d.support_len()))
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = validate(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// Lists every broken invariant of `instance`; empty means well-formed.
pub fn validate(instance: &Instance) -> Vec<Violation> {
    let mut out = Vec::new();
    let h = instance.horizon;
    if h == 0 {
        out.push(Violation::new("horizon", "horizon must be a positive integer"));
    }
    let needed = instance.n() + instance.total_processing();
    if h < needed {
        out.push(Violation::new(
            "horizon",
            format!("horizon {h} is below n + sum of processing times = {needed}"),
        ));
    }
    for (i, b) in instance.boxes.iter().enumerate() {
        let field = |name: &str| format!("boxes[{i}].{name}");
        if b.cost.len() != h {
            out.push(Violation::new(field("cost"), format!("cost table has {} slots, expected {h}", b.cost.len())));
        }
        if b.rewards.len() != h {
            out.push(Violation::new(
                field("rewards"),
                format!("reward table has {} slots, expected {h}", b.rewards.len()),
            ));
        }
        if b.cost.iter().flatten().any(|c| c.is_negative()) {
            out.push(Violation::new(field("cost"), "costs must be nonnegative"));
        }
        b.discount.violations(&field("discount"), &mut out);
        match instance.variant {
            Variant::Instant if b.processing_time != 0 => {
                out.push(Violation::new(field("p"), "instant variant requires zero processing time"));
            }
            Variant::Fixed if !b.is_time_invariant() => {
                out.push(Violation::new(
                    field("cost/rewards"),
                    "fixed variant requires costs and rewards constant in time",
                ));
            }
            _ => {}
        }
    }
    out
}
