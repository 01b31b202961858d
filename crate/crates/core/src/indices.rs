//! Reservation values and capped rewards.
//!
//! The reservation value `r` of a box with reward `V` and cost `c` solves
//! `E[(V - r)^+] = c`. For a finite support the left side is piecewise
//! linear and strictly decreasing below `max V`, so the root is found exactly
//! on the bracketing segment.

use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DiscreteDistribution, Instance};
use crate::rational::Rational;

/// Reservation value of `dist` at inspection cost `cost`.
///
/// * `cost <= 0` gives `max V` (the smallest root, so `Y = V`).
/// * `0 < cost <= E[V]` gives the unique root in `[0, max V)`.
/// * `cost > E[V]` gives the negative root `E[V] - cost` of the linear branch.
pub fn reservation_value(dist: &DiscreteDistribution, cost: &Rational) -> Rational {
    if !cost.is_positive() {
        return dist.max_value().clone();
    }
    let atoms = dist.atoms();
    // On [v_{k-1}, v_k] the excess is upper_mass_value - upper_mass * r.
    let mut upper_value = Rational::zero();
    let mut upper_mass = Rational::zero();
    for k in (0..atoms.len()).rev() {
        let (v, p) = &atoms[k];
        upper_value += v * p;
        upper_mass += p;
        let at_lower_end = match k {
            0 => None,
            _ => Some(&upper_value - &upper_mass * &atoms[k - 1].0),
        };
        if at_lower_end.map_or(true, |g| g >= *cost) {
            return (&upper_value - cost) / &upper_mass;
        }
    }
    unreachable!("the lowest segment is unbounded below")
}

/// Reservation value together with the law of `Y = min(V, r)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReservationIndex {
    pub box_idx: usize,
    /// Inspection round; `None` for time-invariant boxes.
    pub time: Option<usize>,
    #[serde(with = "crate::rational::serde_rational")]
    pub r: Rational,
    #[serde(skip)]
    pub y_law: DiscreteDistribution,
}

impl ReservationIndex {
    pub fn new(box_idx: usize, time: Option<usize>, dist: &DiscreteDistribution, cost: &Rational) -> Self {
        let r = reservation_value(dist, cost);
        let y_law = dist.capped(&r);
        Self { box_idx, time, r, y_law }
    }

    /// Realized `min(V, r)`, signed.
    pub fn cap(&self, value: &Rational) -> Rational {
        value.clone().min(self.r.clone())
    }
}

/// Reservation indices for every inspectable `(box, round)` pair, sorted by `(i, t)`.
pub fn reservation_table(instance: &Instance) -> Vec<ReservationIndex> {
    let mut out = Vec::new();
    for (i, b) in instance.boxes.iter().enumerate() {
        for t in 1..=instance.horizon {
            if let Some(c) = b.cost_at(t) {
                out.push(ReservationIndex::new(i, Some(t), b.reward_at(t), c));
            }
        }
    }
    out
}

/// One proxy box's flags on one outcome branch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SurrogateRecord {
    pub inspected: bool,
    pub accepted: bool,
    /// Realized `Y = min(V, r)`; ignored unless accepted.
    pub capped_value: Rational,
}

/// `E[Σ A_i Y_i]` over an enumerated outcome distribution of
/// `(probability, per-box records)`.
pub fn capped_value_surrogate(branches: &[(Rational, Vec<SurrogateRecord>)]) -> Result<Rational> {
    let mut total = Rational::zero();
    for (prob, records) in branches {
        for rec in records {
            if rec.accepted && !rec.inspected {
                return Err(Error::Contract("a box was accepted without being inspected (A > I)".into()));
            }
            if rec.accepted {
                total += prob * &rec.capped_value;
            }
        }
    }
    Ok(total)
}
