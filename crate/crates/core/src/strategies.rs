//! Executable inspection strategies.
//!
//! Every strategy reads rewards through a [`RealizationSource`], so the same
//! code drives Monte Carlo simulation and exact branch enumeration.

use std::fmt;
use std::str::FromStr;

use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hypergraph::{build, is_matching, BlockHypergraph, Matching};
use crate::indices::{reservation_value, SurrogateRecord};
use crate::model::{expectation_of_max, DiscreteDistribution, Instance, Variant};
use crate::rational::{ratio, Rational};
use crate::submodular::{local_search_bipartite, SubmodularObjective};

/// Supplies the reward revealed when box `box_idx` is inspected at round `t`.
pub trait RealizationSource {
    fn draw(&mut self, box_idx: usize, t: usize, dist: &DiscreteDistribution) -> Result<Rational>;
}

/// Samples rewards from a seeded stream.
pub struct RngSource {
    rng: ChaCha8Rng,
}

impl RngSource {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }
}

impl RealizationSource for RngSource {
    fn draw(&mut self, _box_idx: usize, _t: usize, dist: &DiscreteDistribution) -> Result<Rational> {
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        for (v, p) in dist.atoms() {
            acc += p.to_f64().unwrap_or(0.0);
            if u < acc {
                return Ok(v.clone());
            }
        }
        Ok(dist.max_value().clone())
    }
}

/// Replays one branch of the outcome tree from a tape of atom indices.
///
/// Draws past the end of the tape take atom 0 and extend it, so running a
/// deterministic strategy repeatedly while [`BranchSource::advance`]
/// returns `true` visits every branch exactly once.
#[derive(Clone, Debug, Default)]
pub struct BranchSource {
    tape: Vec<usize>,
    supports: Vec<usize>,
    cursor: usize,
    probability: Rational,
}

impl BranchSource {
    pub fn new() -> Self {
        Self { probability: Rational::from_integer(1.into()), ..Self::default() }
    }

    /// Probability of the branch replayed since the last rewind.
    pub fn probability(&self) -> &Rational {
        &self.probability
    }

    pub fn depth(&self) -> usize {
        self.cursor
    }

    /// Moves to the next branch; `false` once the tree is exhausted.
    pub fn advance(&mut self) -> bool {
        self.tape.truncate(self.cursor);
        self.supports.truncate(self.cursor);
        while let Some(last) = self.tape.pop() {
            let support = self.supports.pop().unwrap_or(0);
            if last + 1 < support {
                self.tape.push(last + 1);
                self.supports.push(support);
                self.rewind();
                return true;
            }
        }
        false
    }

    fn rewind(&mut self) {
        self.cursor = 0;
        self.probability = Rational::from_integer(1.into());
    }
}

impl RealizationSource for BranchSource {
    fn draw(&mut self, _box_idx: usize, _t: usize, dist: &DiscreteDistribution) -> Result<Rational> {
        let atoms = dist.atoms();
        if self.cursor == self.tape.len() {
            self.tape.push(0);
            self.supports.push(atoms.len());
        } else if self.supports[self.cursor] != atoms.len() {
            return Err(Error::Invariant("strategy is not deterministic given its draws".into()));
        }
        let (v, p) = &atoms[self.tape[self.cursor]];
        self.cursor += 1;
        self.probability *= p;
        Ok(v.clone())
    }
}

/// Replays a fixed list of values; fails once it runs dry.
pub struct ScriptedSource {
    values: std::vec::IntoIter<Rational>,
}

impl ScriptedSource {
    pub fn new(values: Vec<Rational>) -> Self {
        Self { values: values.into_iter() }
    }
}

impl RealizationSource for ScriptedSource {
    fn draw(&mut self, box_idx: usize, t: usize, _dist: &DiscreteDistribution) -> Result<Rational> {
        self.values
            .next()
            .ok_or_else(|| Error::Exhausted(format!("no value left for box {box_idx} at round {t}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Inspection {
    pub box_idx: usize,
    pub time: usize,
    #[serde(with = "crate::rational::serde_rational")]
    pub value: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub cost: Rational,
    /// Reservation value of the inspected slot.
    #[serde(with = "crate::rational::serde_rational")]
    pub r: Rational,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Collected {
    pub box_idx: usize,
    #[serde(with = "crate::rational::serde_rational")]
    pub value: Rational,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StrategyTrace {
    pub inspected: Vec<Inspection>,
    /// Halting round; 0 when nothing was inspected.
    pub halted_at: usize,
    pub collected: Option<Collected>,
    #[serde(with = "crate::rational::serde_rational")]
    pub utility: Rational,
}

impl StrategyTrace {
    /// Builds the trace of a run that halted at `halted_at`, collecting the
    /// best discounted value.
    pub fn finish(instance: &Instance, inspected: Vec<Inspection>, halted_at: usize) -> Self {
        let mut collected: Option<Collected> = None;
        for ins in &inspected {
            let rule = &instance.boxes[ins.box_idx].discount;
            let v = rule.apply(&ins.value, halted_at.saturating_sub(ins.time));
            if collected.as_ref().map_or(true, |c| v > c.value) {
                collected = Some(Collected { box_idx: ins.box_idx, value: v });
            }
        }
        let costs: Rational = inspected.iter().map(|i| &i.cost).sum();
        let best = collected.as_ref().map_or_else(Rational::zero, |c| c.value.clone());
        Self { utility: best - costs, inspected, halted_at, collected }
    }

    pub fn total_cost(&self) -> Rational {
        self.inspected.iter().map(|i| &i.cost).sum()
    }

    /// Index into `inspected` of the largest raw value, earliest on ties.
    pub fn proxy_accepted(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (k, ins) in self.inspected.iter().enumerate() {
            if best.map_or(true, |b| ins.value > self.inspected[b].value) {
                best = Some(k);
            }
        }
        best
    }

    /// Utility with undiscounted collection: `max V − Σ c`.
    pub fn proxy_utility(&self) -> Rational {
        let best = self.proxy_accepted().map_or_else(Rational::zero, |k| self.inspected[k].value.clone());
        best - self.total_cost()
    }

    /// Inspection and acceptance flags per inspected slot, with `Y = min(V, r)`.
    pub fn surrogate_records(&self) -> Vec<SurrogateRecord> {
        let accepted = self.proxy_accepted();
        self.inspected
            .iter()
            .enumerate()
            .map(|(k, ins)| SurrogateRecord {
                inspected: true,
                accepted: Some(k) == accepted,
                capped_value: ins.value.clone().min(ins.r.clone()),
            })
            .collect()
    }

    /// Re-derives every bookkeeping field from the inspection log.
    pub fn verify(&self, instance: &Instance) -> Result<()> {
        let mut seen = vec![false; instance.n()];
        let mut free_from = 1usize;
        for ins in &self.inspected {
            let b = instance
                .boxes
                .get(ins.box_idx)
                .ok_or_else(|| Error::Invariant(format!("unknown box {}", ins.box_idx)))?;
            if std::mem::replace(&mut seen[ins.box_idx], true) {
                return Err(Error::Invariant(format!("box {} inspected twice", ins.box_idx)));
            }
            if ins.time < free_from || ins.time > instance.horizon {
                return Err(Error::Invariant(format!("box {} inspected at busy round {}", ins.box_idx, ins.time)));
            }
            if b.cost_at(ins.time) != Some(&ins.cost) {
                return Err(Error::Invariant(format!("box {} charged a wrong cost", ins.box_idx)));
            }
            free_from = ins.time + 1 + b.processing_time;
        }
        if let Some(last) = self.inspected.last() {
            if self.halted_at < last.time {
                return Err(Error::Invariant("halted before the last inspection".into()));
            }
        }
        let rebuilt = StrategyTrace::finish(instance, self.inspected.clone(), self.halted_at);
        if rebuilt.utility != self.utility || rebuilt.collected != self.collected {
            return Err(Error::Invariant("utility does not match the inspection log".into()));
        }
        Ok(())
    }
}

/// A deterministic strategy given its draws.
pub trait Strategy: Sync {
    fn id(&self) -> String;
    fn execute(&self, instance: &Instance, source: &mut dyn RealizationSource) -> Result<StrategyTrace>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Main,
    Instant,
    Fixed,
    FixedHeuristic,
    Weitzman,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] =
        [StrategyKind::Main, StrategyKind::Instant, StrategyKind::Fixed, StrategyKind::FixedHeuristic, StrategyKind::Weitzman];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Main => "main",
            StrategyKind::Instant => "instant",
            StrategyKind::Fixed => "fixed",
            StrategyKind::FixedHeuristic => "fixed_heuristic",
            StrategyKind::Weitzman => "weitzman",
        }
    }

    /// Proven ratio of strategy value to optimal value; `None` when the
    /// strategy carries no certified guarantee.
    pub fn guarantee(self) -> Option<f64> {
        match self {
            StrategyKind::Main => Some(1.0 / 21.3),
            StrategyKind::Instant => Some(1.0 / 8.5),
            StrategyKind::Fixed => Some(0.5),
            StrategyKind::FixedHeuristic => None,
            StrategyKind::Weitzman => Some(1.0),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s || (s == "fixed-heuristic" && *k == StrategyKind::FixedHeuristic))
            .ok_or_else(|| Error::Precondition(format!("unknown strategy '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Slot {
    pub box_idx: usize,
    pub time: usize,
    pub edge: usize,
    #[serde(with = "crate::rational::serde_rational")]
    pub r: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub cost: Rational,
    #[serde(skip)]
    pub y_law: DiscreteDistribution,
}

/// Inspection plan of the matching-based threshold strategies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Schedule {
    pub slots: Vec<Slot>,
    #[serde(with = "crate::rational::serde_rational")]
    pub tau: Rational,
    #[serde(skip)]
    pub label: &'static str,
}

/// Orders the matching by start round and sets `τ = f(M) / 2`.
pub fn pi_main_schedule(h: &BlockHypergraph, matching: &Matching) -> Result<Schedule> {
    if !is_matching(h, &matching.edges)? {
        return Err(Error::Structural("schedule edges do not form a matching".into()));
    }
    let obj = SubmodularObjective::from_hypergraph(h);
    let tau = obj.f_eval(&matching.edges)? * ratio(1, 2);
    let mut slots: Vec<Slot> = matching
        .edges
        .iter()
        .map(|&id| {
            let e = &h.edges[id];
            Slot { box_idx: e.box_idx, time: e.start, edge: id, r: e.r.clone(), cost: e.cost.clone(), y_law: e.y_law.clone() }
        })
        .collect();
    slots.sort_by_key(|s| s.time);
    Ok(Schedule { slots, tau, label: "main" })
}

/// Schedule for instant inspection from a local-search matching.
pub fn pi_instant(instance: &Instance, epsilon: &Rational) -> Result<Schedule> {
    if instance.variant != Variant::Instant {
        return Err(Error::Precondition(format!("instant strategy needs an instant instance, got {}", instance.variant)));
    }
    let h = build(instance);
    let obj = SubmodularObjective::from_hypergraph(&h);
    let m = local_search_bipartite(&obj, &h, epsilon)?;
    let mut s = pi_main_schedule(&h, &m)?;
    s.label = "instant";
    Ok(s)
}

impl Schedule {
    pub fn matching(&self) -> Matching {
        Matching::new(self.slots.iter().map(|s| s.edge).collect())
    }
}

impl Strategy for Schedule {
    fn id(&self) -> String {
        self.label.to_string()
    }

    fn execute(&self, instance: &Instance, source: &mut dyn RealizationSource) -> Result<StrategyTrace> {
        let mut inspected = Vec::new();
        for slot in &self.slots {
            if slot.r < self.tau {
                continue;
            }
            let dist = instance.boxes[slot.box_idx].reward_at(slot.time);
            let value = source.draw(slot.box_idx, slot.time, dist)?;
            let accept = value >= self.tau;
            inspected.push(Inspection { box_idx: slot.box_idx, time: slot.time, value, cost: slot.cost.clone(), r: slot.r.clone() });
            if accept {
                return Ok(StrategyTrace::finish(instance, inspected, slot.time));
            }
        }
        let halt = inspected.last().map_or(0, |i| i.time);
        Ok(StrategyTrace::finish(instance, inspected, halt))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    /// Box index order.
    HalfThreshold,
    /// Descending `E[Y]`; carries no certified guarantee.
    HeuristicOrder,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FixedEntry {
    pub box_idx: usize,
    #[serde(with = "crate::rational::serde_rational")]
    pub r: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub cost: Rational,
    pub processing_time: usize,
    #[serde(skip)]
    pub y_law: DiscreteDistribution,
}

/// Threshold strategy for time-invariant boxes with a running clock.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FixedStrategy {
    pub mode: OrderMode,
    pub order: Vec<FixedEntry>,
    #[serde(with = "crate::rational::serde_rational")]
    pub tau: Rational,
    /// `E[max Y]` over the capped laws.
    #[serde(with = "crate::rational::serde_rational")]
    pub prophet_value: Rational,
}

pub fn pi_fixed(instance: &Instance, mode: OrderMode) -> Result<FixedStrategy> {
    if instance.variant != Variant::Fixed {
        return Err(Error::Precondition(format!("fixed strategy needs a fixed instance, got {}", instance.variant)));
    }
    let mut order: Vec<FixedEntry> = instance
        .boxes
        .iter()
        .enumerate()
        .filter_map(|(i, b)| {
            let cost = b.cost_at(1)?.clone();
            let reward = b.reward_at(1);
            let r = reservation_value(reward, &cost);
            Some(FixedEntry { box_idx: i, y_law: reward.capped(&r), r, cost, processing_time: b.processing_time })
        })
        .collect();
    let laws: Vec<&DiscreteDistribution> = order.iter().map(|e| &e.y_law).collect();
    let ones = vec![Rational::from_integer(1.into()); laws.len()];
    let prophet_value = expectation_of_max(&laws, &ones)?;
    if mode == OrderMode::HeuristicOrder {
        order.sort_by(|a, b| b.y_law.expectation().cmp(&a.y_law.expectation()).then(a.box_idx.cmp(&b.box_idx)));
    }
    Ok(FixedStrategy { mode, order, tau: &prophet_value * ratio(1, 2), prophet_value })
}

impl Strategy for FixedStrategy {
    fn id(&self) -> String {
        match self.mode {
            OrderMode::HalfThreshold => "fixed".into(),
            OrderMode::HeuristicOrder => "fixed_heuristic".into(),
        }
    }

    fn execute(&self, instance: &Instance, source: &mut dyn RealizationSource) -> Result<StrategyTrace> {
        let mut inspected = Vec::new();
        let mut clock = 1usize;
        for entry in &self.order {
            if entry.r < self.tau {
                continue;
            }
            if clock > instance.horizon {
                break;
            }
            let dist = instance.boxes[entry.box_idx].reward_at(clock);
            let value = source.draw(entry.box_idx, clock, dist)?;
            let accept = value >= self.tau;
            inspected.push(Inspection { box_idx: entry.box_idx, time: clock, value, cost: entry.cost.clone(), r: entry.r.clone() });
            if accept {
                return Ok(StrategyTrace::finish(instance, inspected, clock));
            }
            clock += 1 + entry.processing_time;
        }
        let halt = inspected.last().map_or(0, |i| i.time);
        Ok(StrategyTrace::finish(instance, inspected, halt))
    }
}

/// Descending-reservation-value rule for classic instances: zero processing
/// times, identity discounts, constant costs available every round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WeitzmanStrategy {
    pub order: Vec<FixedEntry>,
}

pub fn weitzman_baseline(instance: &Instance) -> Result<WeitzmanStrategy> {
    for (i, b) in instance.boxes.iter().enumerate() {
        if b.processing_time != 0 {
            return Err(Error::Precondition(format!("box {i} has nonzero processing time")));
        }
        if !b.discount.is_identity() {
            return Err(Error::Precondition(format!("box {i} discounts its reward")));
        }
        if !b.is_time_invariant() || b.cost_at(1).is_none() {
            return Err(Error::Precondition(format!("box {i} is not a classic box")));
        }
    }
    let mut order: Vec<FixedEntry> = instance
        .boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let cost = b.cost_at(1).cloned().unwrap_or_default();
            let reward = b.reward_at(1);
            let r = reservation_value(reward, &cost);
            FixedEntry { box_idx: i, y_law: reward.capped(&r), r, cost, processing_time: 0 }
        })
        .collect();
    order.sort_by(|a, b| b.r.cmp(&a.r).then(a.box_idx.cmp(&b.box_idx)));
    Ok(WeitzmanStrategy { order })
}

impl Strategy for WeitzmanStrategy {
    fn id(&self) -> String {
        "weitzman".into()
    }

    fn execute(&self, instance: &Instance, source: &mut dyn RealizationSource) -> Result<StrategyTrace> {
        let mut inspected: Vec<Inspection> = Vec::new();
        let mut best = Rational::zero();
        for (k, entry) in self.order.iter().enumerate() {
            if best >= entry.r {
                break;
            }
            let t = k + 1;
            let value = source.draw(entry.box_idx, t, instance.boxes[entry.box_idx].reward_at(t))?;
            best = best.max(value.clone());
            inspected.push(Inspection { box_idx: entry.box_idx, time: t, value, cost: entry.cost.clone(), r: entry.r.clone() });
        }
        let halt = inspected.last().map_or(0, |i| i.time);
        Ok(StrategyTrace::finish(instance, inspected, halt))
    }
}
