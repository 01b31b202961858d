//! Submodular Block Matching: the objective `f(M) = E[max_{e∈M} Y_e]`, its
//! multilinear extension, measured continuous greedy over the matching
//! polytope, local search for the bipartite (instant) case, and the
//! brute-force optimum used as an oracle.

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::{enumerate_matchings, BlockHypergraph, Matching};
use crate::lp;
use crate::model::{expectation_of_max, DiscreteDistribution};
use crate::rational::{floor_to_grid, from_f64, int, ratio, to_f64, Rational};

/// Bits of the dyadic grid the fractional solution is rounded down to.
const GRID_BITS: u32 = 48;

/// `f(M) = E[max_{e∈M} Y_e]` over a fixed ground set of edges.
#[derive(Clone, Debug)]
pub struct SubmodularObjective {
    y_laws: Vec<DiscreteDistribution>,
}

impl SubmodularObjective {
    pub fn new(y_laws: Vec<DiscreteDistribution>) -> Self {
        Self { y_laws }
    }

    pub fn from_hypergraph(h: &BlockHypergraph) -> Self {
        Self::new(h.edges.iter().map(|e| e.y_law.clone()).collect())
    }

    pub fn ground_size(&self) -> usize {
        self.y_laws.len()
    }

    pub fn law(&self, e: usize) -> &DiscreteDistribution {
        &self.y_laws[e]
    }

    /// Exact `f(set)`; `set` need not be a matching.
    pub fn f_eval(&self, set: &[usize]) -> Result<Rational> {
        let laws = set
            .iter()
            .map(|&e| {
                self.y_laws
                    .get(e)
                    .ok_or_else(|| Error::Structural(format!("element {e} is outside the ground set")))
            })
            .collect::<Result<Vec<_>>>()?;
        let ones = vec![Rational::one(); laws.len()];
        expectation_of_max(&laws, &ones)
    }

    /// Exact multilinear extension `F(x) = E[f(R(x))]`.
    pub fn multilinear_eval(&self, x: &[Rational]) -> Result<Rational> {
        if x.len() != self.y_laws.len() {
            return Err(Error::Structural(format!(
                "point has {} coordinates, ground set has {}",
                x.len(),
                self.y_laws.len()
            )));
        }
        let laws: Vec<&DiscreteDistribution> = self.y_laws.iter().collect();
        expectation_of_max(&laws, x)
    }

    /// `∂F/∂x_e = F(x; x_e←1) - F(x; x_e←0)`.
    pub fn multilinear_partial(&self, x: &[Rational], e: usize) -> Result<Rational> {
        if e >= x.len() {
            return Err(Error::Structural(format!("element {e} is outside the ground set")));
        }
        let mut hi = x.to_vec();
        hi[e] = Rational::one();
        let mut lo = x.to_vec();
        lo[e] = Rational::zero();
        Ok(self.multilinear_eval(&hi)? - self.multilinear_eval(&lo)?)
    }

    pub fn float_view(&self) -> MultilinearF64 {
        MultilinearF64::new(&self.y_laws)
    }
}

/// Double-precision multilinear extension with all marginals in one sweep.
#[derive(Clone, Debug)]
pub struct MultilinearF64 {
    /// Sorted union of support points, starting at 0.
    points: Vec<f64>,
    /// `tails[e][k] = P(Y_e > points[k])`.
    tails: Vec<Vec<f64>>,
}

impl MultilinearF64 {
    fn new(laws: &[DiscreteDistribution]) -> Self {
        let mut exact: Vec<Rational> = std::iter::once(Rational::zero())
            .chain(laws.iter().flat_map(|d| d.atoms().iter().map(|(v, _)| v.clone())))
            .collect();
        exact.sort();
        exact.dedup();
        let tails = laws
            .iter()
            .map(|d| exact.iter().map(|v| to_f64(&d.tail(v))).collect())
            .collect();
        Self { points: exact.iter().map(to_f64).collect(), tails }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for k in 0..self.points.len().saturating_sub(1) {
            let below: f64 = self.tails.iter().zip(x).map(|(t, &xe)| 1.0 - xe * t[k]).product();
            total += (self.points[k + 1] - self.points[k]) * (1.0 - below);
        }
        total
    }

    /// `F(x; x_e←1) - F(x)` for every `e`, via prefix/suffix products.
    pub fn marginals(&self, x: &[f64]) -> Vec<f64> {
        let m = self.tails.len();
        let mut out = vec![0.0; m];
        let mut prefix = vec![1.0; m + 1];
        let mut suffix = vec![1.0; m + 1];
        for k in 0..self.points.len().saturating_sub(1) {
            let width = self.points[k + 1] - self.points[k];
            for e in 0..m {
                prefix[e + 1] = prefix[e] * (1.0 - x[e] * self.tails[e][k]);
            }
            for e in (0..m).rev() {
                suffix[e] = suffix[e + 1] * (1.0 - x[e] * self.tails[e][k]);
            }
            for e in 0..m {
                out[e] += width * prefix[e] * suffix[e + 1] * (1.0 - x[e]) * self.tails[e][k];
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LpMode {
    #[default]
    ExactLp,
    /// Greedy maximal matching by descending weight. Heuristic only.
    GreedyDirection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Scale of the polytope the fractional solution lives in.
    pub b: Rational,
    pub mcg_steps: usize,
    pub lp_mode: LpMode,
    pub rounding_repeats: usize,
    /// Improvement slack for bipartite local search.
    pub local_search_epsilon: Rational,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            b: ratio(5227, 10000),
            mcg_steps: 100,
            lp_mode: LpMode::ExactLp,
            rounding_repeats: 50,
            local_search_epsilon: ratio(1, 8),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.b.is_positive() || self.b > Rational::one() {
            return Err(Error::Precondition("b must lie in (0, 1]".into()));
        }
        if self.mcg_steps < 10 {
            return Err(Error::Precondition("measured continuous greedy needs at least 10 steps".into()));
        }
        if self.local_search_epsilon.is_negative() {
            return Err(Error::Precondition("local search epsilon must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub d: Vec<Rational>,
    /// True when the direction came from the greedy fallback.
    pub heuristic: bool,
}

/// A point of the matching polytope maximizing `<weights, ·>`.
pub fn lp_max_direction(h: &BlockHypergraph, weights: &[Rational], mode: LpMode) -> Result<Direction> {
    if weights.len() != h.edges.len() {
        return Err(Error::Structural("one weight per edge required".into()));
    }
    let positive: Vec<usize> = (0..weights.len()).filter(|&e| weights[e].is_positive()).collect();
    let mut d = vec![Rational::zero(); weights.len()];
    if positive.is_empty() {
        return Ok(Direction { d, heuristic: mode == LpMode::GreedyDirection });
    }
    match mode {
        LpMode::ExactLp => {
            let mut rows: Vec<Vec<Rational>> = Vec::new();
            let mut push_row = |members: Vec<usize>| {
                if !members.is_empty() {
                    let mut row = vec![Rational::zero(); positive.len()];
                    for k in members {
                        row[k] = Rational::one();
                    }
                    rows.push(row);
                }
            };
            for i in 0..h.left_count {
                push_row((0..positive.len()).filter(|&k| h.edges[positive[k]].box_idx == i).collect());
            }
            for t in 1..=h.right_count {
                push_row((0..positive.len()).filter(|&k| h.edges[positive[k]].covers(t)).collect());
            }
            let rhs = vec![Rational::one(); rows.len()];
            let c: Vec<Rational> = positive.iter().map(|&e| weights[e].clone()).collect();
            let sol = lp::maximize(&rows, &rhs, &c)?;
            for (k, &e) in positive.iter().enumerate() {
                d[e] = sol.x[k].clone();
            }
            Ok(Direction { d, heuristic: false })
        }
        LpMode::GreedyDirection => {
            let mut order = positive;
            order.sort_by(|&a, &b| weights[b].cmp(&weights[a]).then(a.cmp(&b)));
            let mut chosen: Vec<usize> = Vec::new();
            for e in order {
                if chosen.iter().all(|&c| !h.edges[c].conflicts(&h.edges[e])) {
                    chosen.push(e);
                    d[e] = Rational::one();
                }
            }
            Ok(Direction { d, heuristic: true })
        }
    }
}

/// A point `x ∈ bP`, the input to contention resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct FractionalSolution {
    pub x: Vec<Rational>,
    pub b: Rational,
    /// `F(x)` in double precision.
    pub value: f64,
    pub heuristic_direction: bool,
}

impl FractionalSolution {
    pub fn x_f64(&self) -> Vec<f64> {
        self.x.iter().map(to_f64).collect()
    }
}

/// Measured continuous greedy: `T` steps of size `b/T`, each moving toward
/// the best LP direction for the current marginals, scaled by `1 - x_e`.
pub fn measured_continuous_greedy(
    obj: &SubmodularObjective,
    h: &BlockHypergraph,
    config: &SolverConfig,
) -> Result<FractionalSolution> {
    config.validate()?;
    if obj.ground_size() != h.edges.len() {
        return Err(Error::Structural("objective and hypergraph disagree on the ground set".into()));
    }
    let view = obj.float_view();
    let step = &config.b / Rational::from_integer(config.mcg_steps.into());
    let mut x = vec![Rational::zero(); h.edges.len()];
    let mut heuristic = false;
    for _ in 0..config.mcg_steps {
        let xf: Vec<f64> = x.iter().map(to_f64).collect();
        let weights = view
            .marginals(&xf)
            .into_iter()
            .map(from_f64)
            .collect::<Result<Vec<_>>>()?;
        let dir = lp_max_direction(h, &weights, config.lp_mode)?;
        heuristic |= dir.heuristic;
        for (xe, de) in x.iter_mut().zip(&dir.d) {
            if de.is_zero() {
                continue;
            }
            let next = &*xe + &step * de * (Rational::one() - &*xe);
            *xe = floor_to_grid(&next, GRID_BITS);
        }
    }
    let value = view.eval(&x.iter().map(to_f64).collect::<Vec<_>>());
    Ok(FractionalSolution { x, b: config.b.clone(), value, heuristic_direction: heuristic })
}

/// Exact `argmax_{M matching} f(M)` by enumeration; first maximizer in
/// enumeration order wins ties.
pub fn brute_force_best_matching(obj: &SubmodularObjective, h: &BlockHypergraph) -> Result<(Matching, Rational)> {
    let mut best = (Matching::default(), Rational::zero());
    for m in enumerate_matchings(h, usize::MAX)? {
        let v = obj.f_eval(&m.edges)?;
        if v > best.1 {
            best = (m, v);
        }
    }
    Ok(best)
}

/// Local search over matchings of a bipartite graph (all spans of length 1).
///
/// Moves, tried in lexicographic order of edge ids: add one edge; add one
/// edge and evict the at most two edges it conflicts with; drop one edge and
/// add two. A move is taken when it beats the current value by a factor of
/// `1 + epsilon / |E|`.
pub fn local_search_bipartite(obj: &SubmodularObjective, h: &BlockHypergraph, epsilon: &Rational) -> Result<Matching> {
    if !h.is_unit_span() {
        return Err(Error::Precondition("local search requires every edge to span a single round".into()));
    }
    let edges = &h.edges;
    if edges.is_empty() {
        return Ok(Matching::default());
    }
    let compatible = |set: &[usize], e: usize| set.iter().all(|&c| c != e && !edges[c].conflicts(&edges[e]));

    let mut current: Vec<usize> = Vec::new();
    let mut value = Rational::zero();
    for e in 0..edges.len() {
        let v = obj.f_eval(&[e])?;
        if v > value || current.is_empty() {
            if v > value {
                value = v;
            }
            current = vec![e];
        }
    }
    let factor = Rational::one() + epsilon / int(edges.len() as i64);

    'improve: loop {
        let threshold = &value * &factor;
        let try_move = |candidate: Vec<usize>| -> Result<Option<(Vec<usize>, Rational)>> {
            let v = obj.f_eval(&candidate)?;
            Ok((v > threshold).then_some((candidate, v)))
        };
        for e in 0..edges.len() {
            if current.contains(&e) {
                continue;
            }
            let mut cand: Vec<usize> = current.iter().copied().filter(|&c| !edges[c].conflicts(&edges[e])).collect();
            cand.push(e);
            if let Some((m, v)) = try_move(cand)? {
                current = m;
                value = v;
                continue 'improve;
            }
        }
        for gi in 0..current.len() {
            let rest: Vec<usize> = current.iter().copied().filter(|&c| c != current[gi]).collect();
            for e1 in 0..edges.len() {
                if !compatible(&rest, e1) || e1 == current[gi] {
                    continue;
                }
                for e2 in e1 + 1..edges.len() {
                    if e2 == current[gi] || !compatible(&rest, e2) || edges[e1].conflicts(&edges[e2]) {
                        continue;
                    }
                    let mut cand = rest.clone();
                    cand.push(e1);
                    cand.push(e2);
                    if let Some((m, v)) = try_move(cand)? {
                        current = m;
                        value = v;
                        continue 'improve;
                    }
                }
            }
        }
        break;
    }
    Ok(Matching::new(current))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::{build, is_matching};
    use crate::model::{BoxSpec, DiscountRule, Instance, Variant};

    fn half(hi: i64) -> DiscreteDistribution {
        DiscreteDistribution::new([(int(hi), ratio(1, 2)), (int(0), ratio(1, 2))]).unwrap()
    }

    fn zero_cost_instance(laws: Vec<DiscreteDistribution>, h: usize, p: usize) -> Instance {
        let boxes = laws
            .into_iter()
            .map(|d| BoxSpec::constant(Some(int(0)), p, d, DiscountRule::Identity, h))
            .collect();
        Instance::new(boxes, h, Variant::General)
    }

    #[test]
    fn f_eval_examples() {
        let obj = SubmodularObjective::new(vec![half(8), DiscreteDistribution::point(int(6))]);
        assert_eq!(obj.f_eval(&[]).unwrap(), int(0));
        assert_eq!(obj.f_eval(&[0]).unwrap(), int(4));
        assert_eq!(obj.f_eval(&[0, 1]).unwrap(), int(7));
        assert!(obj.f_eval(&[2]).is_err());
    }

    #[test]
    fn multilinear_examples() {
        let obj = SubmodularObjective::new(vec![half(8), DiscreteDistribution::point(int(6))]);
        assert_eq!(obj.multilinear_eval(&[int(1), int(1)]).unwrap(), int(7));
        assert_eq!(obj.multilinear_eval(&[int(0), int(0)]).unwrap(), int(0));
        let single = SubmodularObjective::new(vec![half(8)]);
        assert_eq!(single.multilinear_eval(&[ratio(1, 2)]).unwrap(), int(2));
        assert_eq!(single.multilinear_partial(&[ratio(1, 2)], 0).unwrap(), int(4));
    }

    #[test]
    fn float_marginals_match_exact() {
        let obj = SubmodularObjective::new(vec![half(8), DiscreteDistribution::point(int(6)), half(3)]);
        let x = [ratio(1, 3), ratio(1, 4), ratio(1, 2)];
        let xf: Vec<f64> = x.iter().map(to_f64).collect();
        let view = obj.float_view();
        assert!((view.eval(&xf) - to_f64(&obj.multilinear_eval(&x).unwrap())).abs() < 1e-12);
        let marg = view.marginals(&xf);
        for e in 0..3 {
            let mut hi = x.to_vec();
            hi[e] = int(1);
            let exact = obj.multilinear_eval(&hi).unwrap() - obj.multilinear_eval(&x).unwrap();
            assert!((marg[e] - to_f64(&exact)).abs() < 1e-12);
        }
    }

    #[test]
    fn lp_direction_examples() {
        let inst = zero_cost_instance(vec![half(8)], 2, 0);
        let h = build(&inst);
        let dir = lp_max_direction(&h, &[int(-1), int(0)], LpMode::ExactLp).unwrap();
        assert_eq!(dir.d, vec![int(0), int(0)]);
        let dir = lp_max_direction(&h, &[int(3), int(2)], LpMode::ExactLp).unwrap();
        assert_eq!(dir.d, vec![int(1), int(0)]);
        let greedy = lp_max_direction(&h, &[int(3), int(2)], LpMode::GreedyDirection).unwrap();
        assert_eq!(greedy.d, vec![int(1), int(0)]);
        assert!(greedy.heuristic);

        let one = zero_cost_instance(vec![half(8)], 1, 0);
        let h1 = build(&one);
        assert_eq!(lp_max_direction(&h1, &[int(1)], LpMode::ExactLp).unwrap().d, vec![int(1)]);
    }

    #[test]
    fn mcg_single_edge_follows_recursion() {
        let inst = zero_cost_instance(vec![half(8)], 1, 0);
        let h = build(&inst);
        let obj = SubmodularObjective::from_hypergraph(&h);
        let cfg = SolverConfig { b: int(1), ..SolverConfig::default() };
        let sol = measured_continuous_greedy(&obj, &h, &cfg).unwrap();
        let expected = 1.0 - (1.0 - 1.0 / 100.0f64).powi(100);
        assert!((to_f64(&sol.x[0]) - expected).abs() < 1e-9);
        assert!(h.in_scaled_polytope(&sol.x, &cfg.b));
    }

    #[test]
    fn mcg_empty_hypergraph() {
        let inst = Instance::new(vec![], 1, Variant::General);
        let h = build(&inst);
        let obj = SubmodularObjective::from_hypergraph(&h);
        let sol = measured_continuous_greedy(&obj, &h, &SolverConfig::default()).unwrap();
        assert!(sol.x.is_empty());
        assert_eq!(sol.value, 0.0);
    }

    #[test]
    fn brute_force_examples() {
        let inst = zero_cost_instance(vec![half(8)], 1, 0);
        let h = build(&inst);
        let obj = SubmodularObjective::from_hypergraph(&h);
        assert_eq!(brute_force_best_matching(&obj, &h).unwrap(), (Matching::new(vec![0]), int(4)));

        // two conflicting edges (same box) with E[Y] = 4 and 6
        let mut inst = zero_cost_instance(vec![half(8)], 2, 0);
        inst.boxes[0].rewards[1] = DiscreteDistribution::point(int(6));
        let h = build(&inst);
        let obj = SubmodularObjective::from_hypergraph(&h);
        assert_eq!(brute_force_best_matching(&obj, &h).unwrap(), (Matching::new(vec![1]), int(6)));
    }

    #[test]
    fn local_search_examples() {
        let inst = zero_cost_instance(vec![half(8)], 1, 0);
        let h = build(&inst);
        let obj = SubmodularObjective::from_hypergraph(&h);
        assert_eq!(local_search_bipartite(&obj, &h, &ratio(1, 8)).unwrap(), Matching::new(vec![0]));

        let mut two = zero_cost_instance(vec![half(8), half(4)], 2, 0);
        two.boxes[0].cost[1] = None;
        two.boxes[1].cost[0] = None;
        let h = build(&two);
        let obj = SubmodularObjective::from_hypergraph(&h);
        assert_eq!(local_search_bipartite(&obj, &h, &ratio(1, 8)).unwrap(), Matching::new(vec![0, 1]));

        let spans = zero_cost_instance(vec![half(8)], 2, 1);
        let h = build(&spans);
        let obj = SubmodularObjective::from_hypergraph(&h);
        assert!(matches!(local_search_bipartite(&obj, &h, &ratio(1, 8)), Err(Error::Precondition(_))));
    }

    #[test]
    fn local_search_three_by_three_vs_brute_force() {
        let laws = vec![
            DiscreteDistribution::new([(int(9), ratio(1, 3)), (int(1), ratio(2, 3))]).unwrap(),
            DiscreteDistribution::new([(int(6), ratio(1, 2)), (int(2), ratio(1, 2))]).unwrap(),
            DiscreteDistribution::new([(int(12), ratio(1, 4)), (int(0), ratio(3, 4))]).unwrap(),
        ];
        let mut inst = zero_cost_instance(laws, 3, 0);
        inst.boxes[2].rewards[2] = DiscreteDistribution::point(int(5));
        let h = build(&inst);
        let obj = SubmodularObjective::from_hypergraph(&h);
        let eps = ratio(1, 2);
        let m = local_search_bipartite(&obj, &h, &eps).unwrap();
        assert!(is_matching(&h, &m.edges).unwrap());
        let (_, best) = brute_force_best_matching(&obj, &h).unwrap();
        let got = obj.f_eval(&m.edges).unwrap();
        assert!(got * (int(2) + eps) >= best);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig { b: int(0), ..SolverConfig::default() }.validate().is_err());
        assert!(SolverConfig { mcg_steps: 9, ..SolverConfig::default() }.validate().is_err());
    }
}
