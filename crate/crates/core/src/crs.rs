//! Contention resolution for the matching polytope of a block bipartite
//! hypergraph, and the rounding pipeline built on it.
//!
//! The polytope is the intersection of a partition-matroid part (one edge
//! per box) and an interval part (disjoint round spans). Each part gets its
//! own monotone balanced scheme; the composed scheme keeps an edge when both
//! parts keep it, using independent randomness.
//!
//! Randomness: one master seed, one ChaCha stream per `(trial, lane)`, so any
//! trial can be replayed bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hypergraph::{BlockHypergraph, Matching};
use crate::rational::{to_f64, Rational};
use crate::submodular::{FractionalSolution, SubmodularObjective};

const LANE_SAMPLE: u64 = 0;
const LANE_MATROID: u64 = 1;
const LANE_INTERVAL: u64 = 2;
const LANE_AUX: u64 = 3;

/// Deterministic substream `lane` of trial `trial` under `seed`.
pub fn substream(seed: u64, trial: u64, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial.wrapping_mul(4).wrapping_add(lane));
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeTag {
    Matroid,
    Interval,
    Composed,
}

/// The random set `R(x)`: each edge independently with probability `x_e`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveSet {
    pub sampled: Vec<usize>,
    pub seed: u64,
}

impl ActiveSet {
    pub fn sample(x: &[f64], seed: u64, trial: u64) -> Self {
        let mut rng = substream(seed, trial, LANE_SAMPLE);
        Self { sampled: sample_active(x, &mut rng), seed }
    }
}

pub fn sample_active(x: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter_map(|(e, &p)| (rng.gen::<f64>() < p).then_some(e))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CrsOutcome {
    pub kept: Vec<usize>,
    pub scheme: SchemeTag,
}

/// Fair rank-1 contention resolution per box.
///
/// In a block with active set `A` (|A| >= 2) and total mass `X`, edge `e ∈ A`
/// is chosen with probability
/// `(Σ_{f∈A−e} x_f/(|A|−1) + Σ_{f∉A} x_f/|A|) / X`, which makes every active
/// edge survive with probability `(1 − Π_f (1 − x_f)) / X`.
pub fn crs_matroid(h: &BlockHypergraph, x: &[f64], active: &[usize], rng: &mut impl Rng) -> CrsOutcome {
    let blocks = block_members(h, active);
    let mut kept = Vec::new();
    for (i, members) in blocks.iter().enumerate() {
        let u: f64 = rng.gen();
        match members.len() {
            0 => {}
            1 => kept.push(members[0]),
            _ => {
                let probs = fair_choice_probs(h, x, i, members);
                let mut acc = 0.0;
                let mut pick = *members.last().unwrap();
                for (&e, p) in members.iter().zip(&probs) {
                    acc += p;
                    if u < acc {
                        pick = e;
                        break;
                    }
                }
                kept.push(pick);
            }
        }
    }
    kept.sort_unstable();
    CrsOutcome { kept, scheme: SchemeTag::Matroid }
}

fn block_members(h: &BlockHypergraph, active: &[usize]) -> Vec<Vec<usize>> {
    let mut blocks = vec![Vec::new(); h.left_count];
    for &e in active {
        blocks[h.edges[e].box_idx].push(e);
    }
    for b in &mut blocks {
        b.sort_unstable();
    }
    blocks
}

fn fair_choice_probs(h: &BlockHypergraph, x: &[f64], block: usize, members: &[usize]) -> Vec<f64> {
    let total: f64 = h.edges.iter().filter(|e| e.box_idx == block).map(|e| x[e.id]).sum();
    let active_mass: f64 = members.iter().map(|&e| x[e]).sum();
    let k = members.len() as f64;
    let outside = (total - active_mass).max(0.0);
    members
        .iter()
        .map(|&e| ((active_mass - x[e]) / (k - 1.0) + outside / k) / total)
        .collect()
}

/// Probability that `e ∈ active` survives the fair rank-1 scheme.
pub fn matroid_keep_probability(h: &BlockHypergraph, x: &[f64], active: &[usize], e: usize) -> f64 {
    let block = h.edges[e].box_idx;
    let members: Vec<usize> = {
        let mut m: Vec<usize> = active.iter().copied().filter(|&f| h.edges[f].box_idx == block).collect();
        m.sort_unstable();
        m
    };
    if members.len() == 1 {
        return 1.0;
    }
    let probs = fair_choice_probs(h, x, block, &members);
    members.iter().position(|&f| f == e).map_or(0.0, |k| probs[k])
}

/// Survival probability of an active edge in the interval subsampling stage.
pub fn interval_strength(xe: f64) -> f64 {
    if xe <= 1e-12 {
        1.0
    } else {
        (-(-xe).exp_m1() / xe).min(1.0)
    }
}

fn precedes(h: &BlockHypergraph, f: usize, e: usize) -> bool {
    let (ef, ee) = (&h.edges[f], &h.edges[e]);
    (ef.start, f) < (ee.start, e)
}

fn spans_overlap(h: &BlockHypergraph, f: usize, e: usize) -> bool {
    let (ef, ee) = (&h.edges[f], &h.edges[e]);
    ef.start <= ee.end && ee.start <= ef.end
}

fn interval_disjoint(h: &BlockHypergraph, set: &[usize]) -> bool {
    let mut spans: Vec<(usize, usize)> = set.iter().map(|&e| (h.edges[e].start, h.edges[e].end)).collect();
    spans.sort_unstable();
    spans.windows(2).all(|w| w[0].1 < w[1].0)
}

/// Deterministic core of the interval scheme: keep `e` iff no edge of
/// `candidates` that starts earlier (ties by id) overlaps its span.
pub fn interval_resolve(h: &BlockHypergraph, candidates: &[usize]) -> Vec<usize> {
    let mut kept: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&e| !candidates.iter().any(|&f| f != e && precedes(h, f, e) && spans_overlap(h, f, e)))
        .collect();
    kept.sort_unstable();
    kept
}

/// Interval contention resolution.
///
/// If the active set is already span-disjoint it is kept whole. Otherwise
/// each active edge survives a coin with probability `(1 − e^{−x_e}) / x_e`
/// and [`interval_resolve`] runs on the survivors. Coins are drawn for every
/// edge in id order so that runs on nested active sets share a tape.
pub fn crs_interval(h: &BlockHypergraph, x: &[f64], active: &[usize], rng: &mut impl Rng) -> CrsOutcome {
    let coins: Vec<f64> = (0..h.edges.len()).map(|_| rng.gen()).collect();
    CrsOutcome { kept: interval_with_coins(h, x, active, &coins), scheme: SchemeTag::Interval }
}

fn interval_with_coins(h: &BlockHypergraph, x: &[f64], active: &[usize], coins: &[f64]) -> Vec<usize> {
    if interval_disjoint(h, active) {
        let mut kept = active.to_vec();
        kept.sort_unstable();
        return kept;
    }
    let strong: Vec<usize> = active.iter().copied().filter(|&e| coins[e] < interval_strength(x[e])).collect();
    interval_resolve(h, &strong)
}

/// Probability that `e ∈ active` survives the interval scheme.
pub fn interval_keep_probability(h: &BlockHypergraph, x: &[f64], active: &[usize], e: usize) -> f64 {
    if interval_disjoint(h, active) {
        return 1.0;
    }
    let mut p = interval_strength(x[e]);
    for &f in active {
        if f != e && precedes(h, f, e) && spans_overlap(h, f, e) {
            p *= 1.0 - interval_strength(x[f]);
        }
    }
    p
}

/// Composition: an edge is kept when both schemes keep it.
pub fn crs_composed(
    h: &BlockHypergraph,
    x: &[f64],
    active: &[usize],
    matroid_rng: &mut impl Rng,
    interval_rng: &mut impl Rng,
) -> CrsOutcome {
    let m = crs_matroid(h, x, active, matroid_rng);
    let i = crs_interval(h, x, active, interval_rng);
    let kept = m.kept.into_iter().filter(|e| i.kept.binary_search(e).is_ok()).collect();
    CrsOutcome { kept, scheme: SchemeTag::Composed }
}

pub fn composed_keep_probability(h: &BlockHypergraph, x: &[f64], active: &[usize], e: usize) -> f64 {
    matroid_keep_probability(h, x, active, e) * interval_keep_probability(h, x, active, e)
}

/// Balance constant of the composed scheme at scale `b`: `e^{−b}(1 − e^{−b})/b`.
pub fn composed_balance(b: f64) -> f64 {
    (-b).exp() * (-(-b).exp_m1()) / b
}

/// One full sample-then-resolve trial.
pub fn round_trial(h: &BlockHypergraph, x: &[f64], seed: u64, trial: u64) -> Vec<usize> {
    let active = ActiveSet::sample(x, seed, trial);
    let mut mr = substream(seed, trial, LANE_MATROID);
    let mut ir = substream(seed, trial, LANE_INTERVAL);
    crs_composed(h, x, &active.sampled, &mut mr, &mut ir).kept
}

/// Runs `repeats` independent rounding trials and returns the kept matching
/// with the largest `f` (ties: lexicographically smallest edge list).
pub fn round(
    obj: &SubmodularObjective,
    h: &BlockHypergraph,
    x: &FractionalSolution,
    repeats: usize,
    seed: u64,
) -> Result<(Matching, Rational)> {
    if !h.in_scaled_polytope(&x.x, &x.b) {
        return Err(Error::Precondition("fractional point is not in bP".into()));
    }
    let xf = x.x_f64();
    let trials: Vec<(Matching, Rational)> = (0..repeats as u64)
        .into_par_iter()
        .map(|t| {
            let m = Matching::new(round_trial(h, &xf, seed, t));
            let v = obj.f_eval(&m.edges)?;
            Ok((m, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = (Matching::default(), Rational::from_integer(0.into()));
    for (m, v) in trials {
        if v > best.1 || (v == best.1 && m < best.0) {
            best = (m, v);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditRow {
    pub edge: usize,
    pub x_e: f64,
    pub empirical_keep_rate: f64,
    pub bound: f64,
    pub stderr: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub b: f64,
    pub balance: f64,
    pub trials: usize,
    pub rows: Vec<AuditRow>,
    /// Every composed output was a matching.
    pub all_feasible: bool,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.all_feasible && self.rows.iter().all(|r| r.pass)
    }
}

/// Monte Carlo balance audit of the composed scheme: per edge, the rate of
/// `e ∈ π_x(R(x))` against `c · x_e` with a 3-standard-error allowance
/// (standard error of a Bernoulli at the bound).
pub fn crs_audit(h: &BlockHypergraph, x: &[f64], b: f64, trials: usize, seed: u64) -> AuditReport {
    let (counts, all_feasible): (Vec<u64>, bool) = (0..trials as u64)
        .into_par_iter()
        .fold(
            || (vec![0u64; x.len()], true),
            |(mut counts, ok), t| {
                let kept = round_trial(h, x, seed, t);
                let feasible = crate::hypergraph::is_matching(h, &kept).unwrap_or(false);
                for e in kept {
                    counts[e] += 1;
                }
                (counts, ok && feasible)
            },
        )
        .reduce(
            || (vec![0u64; x.len()], true),
            |(mut a, oa), (b, ob)| {
                for (s, v) in a.iter_mut().zip(b) {
                    *s += v;
                }
                (a, oa && ob)
            },
        );
    let c = composed_balance(b);
    let n = trials.max(1) as f64;
    let rows = x
        .iter()
        .enumerate()
        .map(|(e, &xe)| {
            let rate = counts[e] as f64 / n;
            let bound = c * xe;
            let stderr = (bound * (1.0 - bound) / n).sqrt();
            AuditRow { edge: e, x_e: xe, empirical_keep_rate: rate, bound, stderr, pass: rate >= bound - 3.0 * stderr }
        })
        .collect();
    AuditReport { b, balance: c, trials, rows, all_feasible }
}

/// Outcome of the monotonicity audit over nested active sets `A ⊆ B`.
#[derive(Clone, Debug, Serialize)]
pub struct MonotonicityReport {
    pub pairs: usize,
    /// Interval scheme with shared coins: kept under B implies kept under A.
    pub coupling_violations: usize,
    /// Composed scheme: exact keep probability under A below that under B.
    pub probability_violations: usize,
}

pub fn monotonicity_audit(h: &BlockHypergraph, x: &[f64], pairs: usize, seed: u64) -> MonotonicityReport {
    let mut coupling_violations = 0;
    let mut probability_violations = 0;
    for t in 0..pairs as u64 {
        let big = ActiveSet::sample(x, seed, t).sampled;
        let mut aux = substream(seed, t, LANE_AUX);
        let small: Vec<usize> = big.iter().copied().filter(|_| aux.gen::<bool>()).collect();
        let mut ir = substream(seed, t, LANE_INTERVAL);
        let coins: Vec<f64> = (0..h.edges.len()).map(|_| ir.gen()).collect();
        let kept_big = interval_with_coins(h, x, &big, &coins);
        let kept_small = interval_with_coins(h, x, &small, &coins);
        for e in &kept_big {
            if small.contains(e) && kept_small.binary_search(e).is_err() {
                coupling_violations += 1;
            }
        }
        for &e in &small {
            let pa = composed_keep_probability(h, x, &small, e);
            let pb = composed_keep_probability(h, x, &big, e);
            if pa + 1e-12 < pb {
                probability_violations += 1;
            }
        }
    }
    MonotonicityReport { pairs, coupling_violations, probability_violations }
}

/// Scales nonnegative weights so the busiest packing constraint has load exactly `b`.
pub fn scale_into_polytope(h: &BlockHypergraph, weights: &[f64], b: f64) -> Vec<f64> {
    let mut left = vec![0.0; h.left_count];
    let mut right = vec![0.0; h.right_count + 1];
    for (e, w) in h.edges.iter().zip(weights) {
        left[e.box_idx] += w;
        for t in e.start..=e.end {
            right[t] += w;
        }
    }
    let peak = left.iter().chain(right.iter()).cloned().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return vec![0.0; weights.len()];
    }
    // Slightly under b so floating sums never exceed it.
    let scale = b * (1.0 - 1e-12) / peak;
    weights.iter().map(|w| (w * scale).min(1.0)).collect()
}

pub fn x_from_rationals(x: &[Rational]) -> Vec<f64> {
    x.iter().map(to_f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::{build, is_matching};
    use crate::model::{BoxSpec, DiscountRule, DiscreteDistribution, Instance, Variant};
    use crate::rational::int;

    fn graph(ps: &[usize], h: usize) -> BlockHypergraph {
        let boxes = ps
            .iter()
            .map(|&p| BoxSpec::constant(Some(int(0)), p, DiscreteDistribution::point(int(1)), DiscountRule::Identity, h))
            .collect();
        build(&Instance::new(boxes, h, Variant::General))
    }

    #[test]
    fn matroid_examples() {
        let h = graph(&[0], 4);
        let x = vec![0.1; 4];
        let mut rng = substream(1, 0, 0);
        assert_eq!(crs_matroid(&h, &x, &[2], &mut rng).kept, vec![2]);
        // equal masses -> uniform over the active edges
        for e in [0, 1, 3] {
            let p = matroid_keep_probability(&h, &x, &[0, 1, 3], e);
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matroid_balance_uniform_block() {
        // x uniform b/H over one block; exact keep-given-active vs (1 - e^{-b})/b.
        let b = 0.5227;
        let h = graph(&[0], 6);
        let x = vec![b / 6.0; 6];
        let mut rng = substream(7, 0, 0);
        let trials = 100_000;
        let mut active_count = 0u64;
        let mut kept_count = 0u64;
        for _ in 0..trials {
            let active = sample_active(&x, &mut rng);
            if active.contains(&0) {
                active_count += 1;
                if crs_matroid(&h, &x, &active, &mut rng).kept.contains(&0) {
                    kept_count += 1;
                }
            }
        }
        let rate = kept_count as f64 / active_count as f64;
        let target = -(-b as f64).exp_m1() / b;
        let se = (target * (1.0 - target) / active_count as f64).sqrt();
        assert!(rate >= target - 3.0 * se, "rate {rate} target {target}");
    }

    #[test]
    fn interval_examples() {
        let h = graph(&[0, 0], 2);
        let x = vec![0.3; 4];
        let single = h.find(0, 1).unwrap().id;
        let mut rng = substream(3, 0, 0);
        assert_eq!(crs_interval(&h, &x, &[single], &mut rng).kept, vec![single]);

        let h = graph(&[1, 0], 3);
        let early = h.find(0, 1).unwrap().id; // rounds 1..=2
        let late = h.find(1, 2).unwrap().id; // round 2
        assert_eq!(interval_resolve(&h, &[early, late]), vec![early]);
    }

    #[test]
    fn composed_examples() {
        let h = graph(&[0, 0], 2);
        let x = vec![0.25; 4];
        let mut a = substream(5, 0, 1);
        let mut b = substream(5, 0, 2);
        assert!(crs_composed(&h, &x, &[], &mut a, &mut b).kept.is_empty());
        let m = vec![h.find(0, 1).unwrap().id, h.find(1, 2).unwrap().id];
        assert_eq!(crs_composed(&h, &x, &m, &mut a, &mut b).kept, m);
    }

    #[test]
    fn composed_outputs_are_matchings() {
        let h = graph(&[1, 0, 2], 8);
        let weights: Vec<f64> = (0..h.edges.len()).map(|e| 1.0 + (e % 3) as f64).collect();
        let x = scale_into_polytope(&h, &weights, 0.5227);
        for t in 0..2000 {
            let kept = round_trial(&h, &x, 11, t);
            assert!(is_matching(&h, &kept).unwrap());
        }
    }

    #[test]
    fn trials_replay_bit_exactly() {
        let h = graph(&[1, 0], 5);
        let x = scale_into_polytope(&h, &vec![1.0; h.edges.len()], 0.5);
        for t in 0..50 {
            assert_eq!(round_trial(&h, &x, 99, t), round_trial(&h, &x, 99, t));
        }
    }

    #[test]
    fn balance_constant() {
        let c = composed_balance(0.5227);
        assert!((c - 0.4617).abs() < 1e-3, "{c}");
    }
}
