//! Reproducible random instances.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BoxSpec, DiscountRule, DiscreteDistribution, Instance, Variant};
use crate::rational::{int, ratio, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscountKind {
    Identity,
    Commit,
    Multiplicative,
    Table,
    /// A random kind per box.
    Mixed,
}

impl DiscountKind {
    const NAMES: [(&'static str, DiscountKind); 5] = [
        ("identity", DiscountKind::Identity),
        ("commit", DiscountKind::Commit),
        ("multiplicative", DiscountKind::Multiplicative),
        ("table", DiscountKind::Table),
        ("mixed", DiscountKind::Mixed),
    ];
}

impl FromStr for DiscountKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::NAMES
            .iter()
            .find(|(n, _)| *n == s)
            .map(|(_, k)| *k)
            .ok_or_else(|| Error::Precondition(format!("unknown discount kind '{s}'")))
    }
}

impl fmt::Display for DiscountKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = Self::NAMES.iter().find(|(_, k)| k == self).map_or("?", |(n, _)| n);
        f.write_str(name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorParams {
    pub n: usize,
    /// Defaults to the smallest admissible horizon `n + Σ p_i`.
    pub horizon: Option<usize>,
    pub max_processing: usize,
    /// Atoms per reward law (at least 1).
    pub support: usize,
    /// Support values are integers in `0..=max_value`.
    pub max_value: u32,
    /// Costs are multiples of 1/4 in `[cost_min, cost_max]`.
    pub cost_min: u32,
    pub cost_max: u32,
    /// Probability that a round is unavailable for a box (general and instant only).
    pub absent_prob: f64,
    pub discount: DiscountKind,
    pub variant: Variant,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            n: 3,
            horizon: None,
            max_processing: 1,
            support: 2,
            max_value: 10,
            cost_min: 0,
            cost_max: 3,
            absent_prob: 0.0,
            discount: DiscountKind::Mixed,
            variant: Variant::General,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Precondition(m.into()));
        if self.support == 0 {
            return bad("support must be at least 1");
        }
        if self.support > self.max_value as usize + 1 {
            return bad("support cannot exceed the number of distinct values 0..=max_value");
        }
        if self.cost_min > self.cost_max {
            return bad("cost_min exceeds cost_max");
        }
        if !(0.0..1.0).contains(&self.absent_prob) {
            return bad("absent_prob must lie in [0,1)");
        }
        if let Some(h) = self.horizon {
            if h < self.n.max(1) {
                return bad("horizon must be at least the number of boxes");
            }
        }
        Ok(())
    }
}

/// Draws an instance; the same `(params, seed)` always gives the same instance.
pub fn generate(params: &GeneratorParams, seed: u64) -> Result<Instance> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_p = if params.variant == Variant::Instant { 0 } else { params.max_processing };
    let mut ps: Vec<usize> = (0..params.n).map(|_| rng.gen_range(0..=max_p)).collect();
    let horizon = match params.horizon {
        Some(h) => {
            while params.n + ps.iter().sum::<usize>() > h {
                let busy: Vec<usize> = (0..ps.len()).filter(|&i| ps[i] > 0).collect();
                let &i = busy.choose(&mut rng).expect("horizon >= n leaves a feasible assignment");
                ps[i] -= 1;
            }
            h
        }
        None => (params.n + ps.iter().sum::<usize>()).max(1),
    };
    let boxes = ps
        .into_iter()
        .map(|p| {
            let discount = draw_discount(params.discount, horizon, &mut rng);
            match params.variant {
                Variant::Fixed => {
                    let cost = draw_cost(params, &mut rng);
                    let reward = draw_law(params, &mut rng);
                    BoxSpec::constant(Some(cost), p, reward, discount, horizon)
                }
                Variant::General | Variant::Instant => {
                    let cost = (0..horizon)
                        .map(|_| {
                            let absent = params.absent_prob > 0.0 && rng.gen::<f64>() < params.absent_prob;
                            let c = draw_cost(params, &mut rng);
                            (!absent).then_some(c)
                        })
                        .collect();
                    let rewards = (0..horizon).map(|_| draw_law(params, &mut rng)).collect();
                    BoxSpec { cost, processing_time: p, rewards, discount }
                }
            }
        })
        .collect();
    let instance = Instance::new(boxes, horizon, params.variant);
    instance.ensure_valid()?;
    Ok(instance)
}

fn draw_cost(params: &GeneratorParams, rng: &mut impl Rng) -> Rational {
    let quarters = rng.gen_range(params.cost_min * 4..=params.cost_max * 4);
    ratio(quarters as i64, 4)
}

fn draw_law(params: &GeneratorParams, rng: &mut impl Rng) -> DiscreteDistribution {
    let values = rand::seq::index::sample(rng, params.max_value as usize + 1, params.support);
    let weights: Vec<i64> = (0..params.support).map(|_| rng.gen_range(1..=6)).collect();
    let total: i64 = weights.iter().sum();
    DiscreteDistribution::new(values.iter().zip(&weights).map(|(v, w)| (int(v as i64), ratio(*w, total))))
        .expect("positive weights normalized to one")
}

fn draw_discount(kind: DiscountKind, horizon: usize, rng: &mut impl Rng) -> DiscountRule {
    let kind = match kind {
        DiscountKind::Mixed => *[DiscountKind::Identity, DiscountKind::Commit, DiscountKind::Multiplicative, DiscountKind::Table]
            .choose(rng)
            .expect("nonempty"),
        k => k,
    };
    match kind {
        DiscountKind::Identity | DiscountKind::Mixed => DiscountRule::Identity,
        DiscountKind::Commit => DiscountRule::Commit,
        DiscountKind::Multiplicative => {
            let factors = [ratio(1, 2), ratio(3, 4), ratio(9, 10)];
            DiscountRule::Multiplicative { factor: factors.choose(rng).expect("nonempty").clone() }
        }
        DiscountKind::Table => {
            let mut multipliers = vec![int(1)];
            let mut cur = 8i64;
            for _ in 0..horizon {
                cur -= rng.gen_range(0..=2).min(cur);
                multipliers.push(ratio(cur, 8));
            }
            DiscountRule::Table { multipliers }
        }
    }
}
