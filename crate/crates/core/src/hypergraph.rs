//! The block bipartite hypergraph of an instance.
//!
//! Left vertex `i` is box `i`; right vertex `t` is round `t`. Hyperedge
//! `e(i, j)` joins box `i` to the consecutive rounds `j..=j + p_i` and stands
//! for "inspect box `i` at round `j`". Edges are only materialized where the
//! box has a cost at round `j`.

use num_traits::Zero;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::indices::ReservationIndex;
use crate::model::{DiscreteDistribution, Instance};
use crate::rational::{int, Rational};

/// Enumeration refuses hypergraphs with more edges than this.
pub const MAX_ENUMERATION_EDGES: usize = 40;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HyperEdge {
    pub id: usize,
    pub box_idx: usize,
    pub start: usize,
    /// Last round of the span, `start + p_i`.
    pub end: usize,
    pub cost: Rational,
    pub r: Rational,
    pub reward: DiscreteDistribution,
    /// Law of `Y = min(V, r)` (clamped at zero).
    pub y_law: DiscreteDistribution,
}

impl HyperEdge {
    pub fn span_len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn conflicts(&self, other: &HyperEdge) -> bool {
        self.box_idx == other.box_idx || (self.start <= other.end && other.start <= self.end)
    }

    pub fn covers(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockHypergraph {
    pub left_count: usize,
    /// Rounds `1..=right_count`; spans may run past the horizon by up to `max p_i`.
    pub right_count: usize,
    pub edges: Vec<HyperEdge>,
}

/// A set of pairwise disjoint edges, stored as sorted edge ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Matching {
    pub edges: Vec<usize>,
}

impl Matching {
    pub fn new(mut edges: Vec<usize>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        Self { edges }
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }
}

/// Builds `H(I)` with one edge per inspectable `(i, j)`, ordered by `(i, j)`.
pub fn build(instance: &Instance) -> BlockHypergraph {
    let mut edges = Vec::new();
    for (i, b) in instance.boxes.iter().enumerate() {
        for j in 1..=instance.horizon {
            let Some(cost) = b.cost_at(j) else { continue };
            let reward = b.reward_at(j).clone();
            let index = ReservationIndex::new(i, Some(j), &reward, cost);
            edges.push(HyperEdge {
                id: edges.len(),
                box_idx: i,
                start: j,
                end: j + b.processing_time,
                cost: cost.clone(),
                r: index.r,
                reward,
                y_law: index.y_law,
            });
        }
    }
    BlockHypergraph {
        left_count: instance.n(),
        right_count: instance.horizon + instance.max_processing(),
        edges,
    }
}

impl BlockHypergraph {
    pub fn edge(&self, id: usize) -> Result<&HyperEdge> {
        self.edges
            .get(id)
            .ok_or_else(|| Error::Structural(format!("edge {id} is not in the hypergraph")))
    }

    /// The edge for box `i` inspected at round `j`, if materialized.
    pub fn find(&self, box_idx: usize, start: usize) -> Option<&HyperEdge> {
        self.edges
            .binary_search_by(|e| (e.box_idx, e.start).cmp(&(box_idx, start)))
            .ok()
            .map(|k| &self.edges[k])
    }

    pub fn is_unit_span(&self) -> bool {
        self.edges.iter().all(|e| e.span_len() == 1)
    }

    /// `d(P)`: the smallest `1 / (number of edges in a constraint)` over the
    /// left-vertex and right-vertex packing constraints.
    pub fn density(&self) -> Rational {
        let mut worst = 0usize;
        let mut per_left = vec![0usize; self.left_count];
        let mut per_right = vec![0usize; self.right_count + 1];
        for e in &self.edges {
            per_left[e.box_idx] += 1;
            for t in e.start..=e.end {
                per_right[t] += 1;
            }
        }
        for c in per_left.into_iter().chain(per_right) {
            worst = worst.max(c);
        }
        if worst == 0 {
            int(1)
        } else {
            Rational::new(1.into(), worst.into())
        }
    }

    /// True iff `x ∈ bP`: every left-vertex sum and every right-vertex
    /// coverage sum is at most `b`, and `0 <= x_e <= 1`.
    pub fn in_scaled_polytope(&self, x: &[Rational], b: &Rational) -> bool {
        if x.len() != self.edges.len() {
            return false;
        }
        let one = int(1);
        if x.iter().any(|v| *v < Rational::zero() || *v > one) {
            return false;
        }
        let mut left = vec![Rational::zero(); self.left_count];
        let mut right = vec![Rational::zero(); self.right_count + 1];
        for (e, v) in self.edges.iter().zip(x) {
            left[e.box_idx] += v;
            for t in e.start..=e.end {
                right[t] += v;
            }
        }
        left.iter().chain(right.iter()).all(|s| s <= b)
    }
}

/// True iff the edges are pairwise disjoint. Unknown ids are an error.
pub fn is_matching(h: &BlockHypergraph, edges: &[usize]) -> Result<bool> {
    let mut chosen = Vec::with_capacity(edges.len());
    for &id in edges {
        chosen.push(h.edge(id)?);
    }
    let mut seen_left = vec![false; h.left_count];
    for e in &chosen {
        if std::mem::replace(&mut seen_left[e.box_idx], true) {
            return Ok(false);
        }
    }
    chosen.sort_by_key(|e| (e.start, e.end));
    Ok(chosen.windows(2).all(|w| w[0].end < w[1].start))
}

/// Membership test for the proxy feasibility family: the tuple's edges form
/// a matching and their start rounds strictly increase.
pub fn proxy_feasible_prefix(h: &BlockHypergraph, tuple: &[usize]) -> bool {
    let Ok(edges) = tuple.iter().map(|&id| h.edge(id)).collect::<Result<Vec<_>>>() else {
        return false;
    };
    if edges.windows(2).any(|w| w[0].start >= w[1].start) {
        return false;
    }
    is_matching(h, tuple).unwrap_or(false)
}

/// Every matching with at most `max_edges` edges, each exactly once, in
/// depth-first order starting from the empty matching.
pub fn enumerate_matchings(h: &BlockHypergraph, max_edges: usize) -> Result<MatchingIter<'_>> {
    if h.edges.len() > MAX_ENUMERATION_EDGES {
        return Err(Error::Capacity {
            what: "hypergraph edge count for enumeration".into(),
            actual: h.edges.len(),
            limit: MAX_ENUMERATION_EDGES,
        });
    }
    Ok(MatchingIter { h, max_edges, chosen: Vec::new(), cursor: Vec::new(), started: false })
}

pub struct MatchingIter<'a> {
    h: &'a BlockHypergraph,
    max_edges: usize,
    chosen: Vec<usize>,
    /// `cursor[d]` is the next candidate edge at depth `d`.
    cursor: Vec<usize>,
    started: bool,
}

impl Iterator for MatchingIter<'_> {
    type Item = Matching;

    fn next(&mut self) -> Option<Matching> {
        if !self.started {
            self.started = true;
            self.cursor.push(0);
            return Some(Matching::default());
        }
        loop {
            let depth = self.chosen.len();
            let from = *self.cursor.get(depth)?;
            if depth < self.max_edges {
                let edges = &self.h.edges;
                let next = (from..edges.len())
                    .find(|&k| self.chosen.iter().all(|&c| !edges[c].conflicts(&edges[k])));
                if let Some(k) = next {
                    self.cursor[depth] = k + 1;
                    self.chosen.push(k);
                    self.cursor.push(k + 1);
                    return Some(Matching { edges: self.chosen.clone() });
                }
            }
            if self.chosen.pop().is_none() {
                self.cursor.clear();
                return None;
            }
            self.cursor.pop();
        }
    }
}
