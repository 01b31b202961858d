//! Evaluation engines: exact enumeration of outcome branches, Monte Carlo
//! estimation, and an expectimax oracle for the optimal adaptive strategy.

use std::collections::HashMap;

use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::crs::substream;
use crate::error::{Error, Result};
use crate::hypergraph::build;
use crate::indices::{capped_value_surrogate, reservation_value};
use crate::model::{BoxSpec, DiscountRule, Instance};
use crate::rational::{to_f64, Rational};
use crate::strategies::{BranchSource, Inspection, RealizationSource, RngSource, Strategy, StrategyTrace};
use crate::submodular::{brute_force_best_matching, SubmodularObjective};

/// Exact evaluation refuses strategies with more outcome branches than this.
pub const EXACT_BRANCH_LIMIT: usize = 1_000_000;

/// Calls `visit(probability, trace)` once per outcome branch of `strategy`.
pub fn for_each_branch(
    instance: &Instance,
    strategy: &dyn Strategy,
    mut visit: impl FnMut(&Rational, &StrategyTrace) -> Result<()>,
) -> Result<usize> {
    let mut src = BranchSource::new();
    let mut branches = 0usize;
    loop {
        let trace = strategy.execute(instance, &mut src)?;
        branches += 1;
        if branches > EXACT_BRANCH_LIMIT {
            return Err(Error::Capacity {
                what: "outcome branches (use Monte Carlo instead)".into(),
                actual: branches,
                limit: EXACT_BRANCH_LIMIT,
            });
        }
        visit(src.probability(), &trace)?;
        if !src.advance() {
            return Ok(branches);
        }
    }
}

pub fn exact_trace_distribution(instance: &Instance, strategy: &dyn Strategy) -> Result<Vec<(Rational, StrategyTrace)>> {
    let mut out = Vec::new();
    for_each_branch(instance, strategy, |p, t| {
        out.push((p.clone(), t.clone()));
        Ok(())
    })?;
    Ok(out)
}

pub fn exact_expected_utility(instance: &Instance, strategy: &dyn Strategy) -> Result<Rational> {
    let mut total = Rational::zero();
    for_each_branch(instance, strategy, |p, t| {
        total += p * &t.utility;
        Ok(())
    })?;
    Ok(total)
}

/// Exact `E[max V − Σ c]` and `E[Σ A_i Y_i]` of a strategy, for checking
/// that the surrogate matches the undiscounted utility.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SurrogateCheck {
    #[serde(with = "crate::rational::serde_rational")]
    pub proxy_utility: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub surrogate: Rational,
}

pub fn exact_surrogate_check(instance: &Instance, strategy: &dyn Strategy) -> Result<SurrogateCheck> {
    let mut proxy_utility = Rational::zero();
    let mut branches = Vec::new();
    for_each_branch(instance, strategy, |p, t| {
        proxy_utility += p * t.proxy_utility();
        branches.push((p.clone(), t.surrogate_records()));
        Ok(())
    })?;
    Ok(SurrogateCheck { proxy_utility, surrogate: capped_value_surrogate(&branches)? })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub strategy_id: String,
    pub mode: &'static str,
    /// Present in exact mode.
    #[serde(serialize_with = "crate::rational::serde_rational_opt::serialize")]
    pub expected_utility: Option<Rational>,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

impl EvalReport {
    pub fn exact(instance: &Instance, strategy: &dyn Strategy) -> Result<Self> {
        let v = exact_expected_utility(instance, strategy)?;
        Ok(Self { strategy_id: strategy.id(), mode: "exact", mean: to_f64(&v), expected_utility: Some(v), stderr: 0.0, trials: 0 })
    }
}

/// Mean utility over `trials` seeded runs; trial `k` draws from its own stream.
pub fn monte_carlo(instance: &Instance, strategy: &dyn Strategy, trials: usize, seed: u64) -> Result<EvalReport> {
    if trials == 0 {
        return Err(Error::Precondition("Monte Carlo needs at least one trial".into()));
    }
    let utilities: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut src = RngSource::new(substream(seed, k, 0));
            strategy.execute(instance, &mut src).map(|t| to_f64(&t.utility))
        })
        .collect::<Result<_>>()?;
    let n = trials as f64;
    let mean = utilities.iter().sum::<f64>() / n;
    let var = if trials > 1 { utilities.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(EvalReport { strategy_id: strategy.id(), mode: "monte_carlo", expected_utility: None, mean, stderr: (var / n).sqrt(), trials })
}

/// Size limits of the expectimax oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct OracleGuards {
    pub max_boxes: usize,
    pub max_horizon: usize,
    pub max_support: usize,
    pub unchecked: bool,
}

pub const GUARD_ENV: &str = "PANDORA_GUARD_OVERRIDE";

impl Default for OracleGuards {
    fn default() -> Self {
        Self { max_boxes: 3, max_horizon: 6, max_support: 3, unchecked: false }
    }
}

impl OracleGuards {
    /// Defaults, overridden by `PANDORA_GUARD_OVERRIDE="n,H,support"` when set.
    pub fn from_env() -> Result<Self> {
        match std::env::var(GUARD_ENV) {
            Ok(text) => Self::parse(&text),
            Err(_) => Ok(Self::default()),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<usize> = text
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Precondition(format!("{GUARD_ENV} must look like 'n,H,support', got '{text}'")))?;
        match parts.as_slice() {
            [n, h, s] => Ok(Self { max_boxes: *n, max_horizon: *h, max_support: *s, unchecked: false }),
            _ => Err(Error::Precondition(format!("{GUARD_ENV} must look like 'n,H,support', got '{text}'"))),
        }
    }

    pub fn check(&self, instance: &Instance) -> Result<()> {
        if self.unchecked {
            return Ok(());
        }
        let checks = [
            ("boxes", instance.n(), self.max_boxes),
            ("horizon", instance.horizon, self.max_horizon),
            ("support size", instance.max_support(), self.max_support),
        ];
        for (what, actual, limit) in checks {
            if actual > limit {
                return Err(Error::Capacity { what: format!("oracle {what}"), actual, limit });
            }
        }
        Ok(())
    }
}

/// Decision tree of the optimal adaptive strategy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum PolicyNode {
    Halt,
    Inspect {
        box_idx: usize,
        time: usize,
        #[serde(with = "crate::rational::serde_rational")]
        cost: Rational,
        branches: Vec<PolicyBranch>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PolicyBranch {
    #[serde(with = "crate::rational::serde_rational")]
    pub value: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub probability: Rational,
    pub next: PolicyNode,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OracleResult {
    #[serde(with = "crate::rational::serde_rational")]
    pub optimal_value: Rational,
    pub states_explored: usize,
    pub policy: PolicyNode,
}

/// Inspection records `(box, round, value)` sorted by box.
type OracleState = Vec<(usize, usize, Rational)>;
type Action = (usize, usize);

struct Expectimax<'a> {
    instance: &'a Instance,
    memo: HashMap<OracleState, (Rational, Option<Action>)>,
}

impl Expectimax<'_> {
    fn halt_value(&self, state: &OracleState) -> Rational {
        let Some(halt) = state.iter().map(|r| r.1).max() else {
            return Rational::zero();
        };
        state
            .iter()
            .map(|(i, t, v)| self.instance.boxes[*i].discount.apply(v, halt - t))
            .max()
            .unwrap_or_else(Rational::zero)
    }

    fn next_free(&self, state: &OracleState) -> usize {
        state
            .iter()
            .max_by_key(|r| r.1)
            .map_or(1, |(i, t, _)| t + 1 + self.instance.boxes[*i].processing_time)
    }

    fn actions(&self, state: &OracleState) -> Vec<Action> {
        let from = self.next_free(state);
        let mut out = Vec::new();
        for (i, b) in self.instance.boxes.iter().enumerate() {
            if state.iter().any(|r| r.0 == i) {
                continue;
            }
            for t in from..=self.instance.horizon {
                if b.cost_at(t).is_some() {
                    out.push((i, t));
                }
            }
        }
        out
    }

    fn child(state: &OracleState, i: usize, t: usize, v: &Rational) -> OracleState {
        let mut next = state.clone();
        let pos = next.partition_point(|r| r.0 < i);
        next.insert(pos, (i, t, v.clone()));
        next
    }

    fn value(&mut self, state: &OracleState) -> Rational {
        if let Some((v, _)) = self.memo.get(state) {
            return v.clone();
        }
        let mut best = self.halt_value(state);
        let mut best_action = None;
        for (i, t) in self.actions(state) {
            let b = &self.instance.boxes[i];
            let mut q = -b.cost_at(t).cloned().unwrap_or_default();
            for (v, p) in b.reward_at(t).atoms() {
                q += p * self.value(&Self::child(state, i, t, v));
            }
            if q > best {
                best = q;
                best_action = Some((i, t));
            }
        }
        self.memo.insert(state.clone(), (best.clone(), best_action));
        best
    }

    fn policy(&self, state: &OracleState) -> PolicyNode {
        match self.memo.get(state).and_then(|(_, a)| *a) {
            None => PolicyNode::Halt,
            Some((i, t)) => {
                let b: &BoxSpec = &self.instance.boxes[i];
                let branches = b
                    .reward_at(t)
                    .atoms()
                    .iter()
                    .map(|(v, p)| PolicyBranch {
                        value: v.clone(),
                        probability: p.clone(),
                        next: self.policy(&Self::child(state, i, t, v)),
                    })
                    .collect();
                PolicyNode::Inspect { box_idx: i, time: t, cost: b.cost_at(t).cloned().unwrap_or_default(), branches }
            }
        }
    }
}

/// Optimal adaptive value by expectimax over inspection histories. Ties
/// prefer halting, then the lexicographically first `(box, round)`.
pub fn optimal_adaptive_oracle(instance: &Instance, guards: &OracleGuards) -> Result<OracleResult> {
    guards.check(instance)?;
    let mut search = Expectimax { instance, memo: HashMap::new() };
    let root = Vec::new();
    let optimal_value = search.value(&root);
    let policy = search.policy(&root);
    Ok(OracleResult { optimal_value, states_explored: search.memo.len(), policy })
}

/// Expected utility of a policy tree, computing the utility of each leaf
/// from its inspection log.
pub fn evaluate_policy(instance: &Instance, policy: &PolicyNode) -> Rational {
    fn walk(instance: &Instance, node: &PolicyNode, log: &mut Vec<Inspection>, prob: &Rational, acc: &mut Rational) {
        match node {
            PolicyNode::Halt => {
                let halt = log.last().map_or(0, |i| i.time);
                *acc += prob * StrategyTrace::finish(instance, log.clone(), halt).utility;
            }
            PolicyNode::Inspect { box_idx, time, cost, branches } => {
                for br in branches {
                    log.push(Inspection { box_idx: *box_idx, time: *time, value: br.value.clone(), cost: cost.clone(), r: Rational::zero() });
                    walk(instance, &br.next, log, &(prob * &br.probability), acc);
                    log.pop();
                }
            }
        }
    }
    let mut acc = Rational::zero();
    walk(instance, policy, &mut Vec::new(), &Rational::one(), &mut acc);
    acc
}

impl Strategy for OracleResult {
    fn id(&self) -> String {
        "oracle".into()
    }

    fn execute(&self, instance: &Instance, source: &mut dyn RealizationSource) -> Result<StrategyTrace> {
        let mut node = &self.policy;
        let mut log = Vec::new();
        while let PolicyNode::Inspect { box_idx, time, cost, branches } = node {
            let value = source.draw(*box_idx, *time, instance.boxes[*box_idx].reward_at(*time))?;
            let br = branches
                .iter()
                .find(|b| b.value == value)
                .ok_or_else(|| Error::Invariant("policy tree has no branch for a drawn value".into()))?;
            let r = reservation_value(instance.boxes[*box_idx].reward_at(*time), cost);
            log.push(Inspection { box_idx: *box_idx, time: *time, value, cost: cost.clone(), r });
            node = &br.next;
        }
        let halt = log.last().map_or(0, |i| i.time);
        Ok(StrategyTrace::finish(instance, log, halt))
    }
}

/// The zero-cost instance whose rewards are the capped laws `Y` of `instance`.
pub fn capped_zero_cost_instance(instance: &Instance) -> Instance {
    let boxes = instance
        .boxes
        .iter()
        .map(|b| {
            let mut cost = Vec::with_capacity(instance.horizon);
            let mut rewards = Vec::with_capacity(instance.horizon);
            for t in 1..=instance.horizon {
                let reward = b.reward_at(t);
                match b.cost_at(t) {
                    Some(c) => {
                        rewards.push(reward.capped(&reservation_value(reward, c)));
                        cost.push(Some(Rational::zero()));
                    }
                    None => {
                        rewards.push(reward.clone());
                        cost.push(None);
                    }
                }
            }
            BoxSpec { cost, processing_time: b.processing_time, rewards, discount: DiscountRule::Identity }
        })
        .collect();
    Instance::new(boxes, instance.horizon, instance.variant)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptivityProbe {
    #[serde(with = "crate::rational::serde_rational")]
    pub adaptive_opt: Rational,
    #[serde(with = "crate::rational::serde_rational")]
    pub best_matching_value: Rational,
    /// `best_matching_value / adaptive_opt`, 1 when both vanish.
    pub ratio: f64,
}

/// Compares the adaptive optimum with the best fixed matching on the
/// capped zero-cost version of `instance`.
pub fn adaptivity_gap_probe(instance: &Instance, guards: &OracleGuards) -> Result<AdaptivityProbe> {
    let probe = capped_zero_cost_instance(instance);
    let adaptive_opt = optimal_adaptive_oracle(&probe, guards)?.optimal_value;
    let h = build(&probe);
    let obj = SubmodularObjective::from_hypergraph(&h);
    let (_, best_matching_value) = brute_force_best_matching(&obj, &h)?;
    let ratio = if adaptive_opt.is_zero() { 1.0 } else { to_f64(&(&best_matching_value / &adaptive_opt)) };
    Ok(AdaptivityProbe { adaptive_opt, best_matching_value, ratio })
}

/// One row of a strategy-versus-oracle comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub instance_id: String,
    pub strategy: String,
    pub value: f64,
    pub oracle: f64,
    pub ratio: f64,
    pub guarantee_bound: Option<f64>,
    pub pass: &'static str,
}

impl ComparisonRow {
    pub fn new(instance_id: &str, strategy: &str, value: &Rational, oracle: &Rational, bound: Option<f64>) -> Self {
        let ratio = if oracle.is_zero() {
            if *value >= Rational::zero() { 1.0 } else { 0.0 }
        } else {
            to_f64(&(value / oracle))
        };
        let pass = match bound {
            None => "n/a",
            Some(b) if ratio >= b - 1e-12 => "pass",
            Some(_) => "fail",
        };
        Self { instance_id: instance_id.into(), strategy: strategy.into(), value: to_f64(value), oracle: to_f64(oracle), ratio, guarantee_bound: bound, pass }
    }
}
