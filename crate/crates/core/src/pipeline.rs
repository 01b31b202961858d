//! End-to-end orchestration: hypergraph, continuous greedy, rounding,
//! schedule and evaluation, with every intermediate value reported.

use num_traits::Zero;
use rayon::prelude::*;
use serde::Serialize;

use crate::crs::round;
use crate::engine::{exact_expected_utility, monte_carlo, optimal_adaptive_oracle, ComparisonRow, EvalReport, OracleGuards};
use crate::error::{Error, Result, StageExt};
use crate::hypergraph::{build, BlockHypergraph, Matching, MAX_ENUMERATION_EDGES};
use crate::indices::reservation_table;
use crate::model::Instance;
use crate::rational::{format_rational, to_f64, Rational};
use crate::strategies::{pi_fixed, pi_instant, pi_main_schedule, weitzman_baseline, OrderMode, Schedule, Strategy, StrategyKind};
use crate::submodular::{brute_force_best_matching, measured_continuous_greedy, FractionalSolution, SolverConfig, SubmodularObjective};

/// Output of the matching stage.
pub struct SolveOutput {
    pub hypergraph: BlockHypergraph,
    pub objective: SubmodularObjective,
    pub fractional: FractionalSolution,
    pub matching: Matching,
    pub f_matching: Rational,
}

/// Builds the hypergraph, runs continuous greedy and rounds the result.
pub fn solve(instance: &Instance, solver: &SolverConfig, seed: u64) -> Result<SolveOutput> {
    instance.ensure_valid().stage("validate")?;
    solver.validate().stage("config")?;
    let hypergraph = build(instance);
    let objective = SubmodularObjective::from_hypergraph(&hypergraph);
    let fractional = measured_continuous_greedy(&objective, &hypergraph, solver).stage("continuous_greedy")?;
    let (matching, f_matching) =
        round(&objective, &hypergraph, &fractional, solver.rounding_repeats, seed).stage("rounding")?;
    Ok(SolveOutput { hypergraph, objective, fractional, matching, f_matching })
}

pub fn main_schedule(instance: &Instance, solver: &SolverConfig, seed: u64) -> Result<Schedule> {
    let out = solve(instance, solver, seed)?;
    pi_main_schedule(&out.hypergraph, &out.matching).stage("schedule")
}

pub fn build_strategy(instance: &Instance, kind: StrategyKind, solver: &SolverConfig, seed: u64) -> Result<Box<dyn Strategy>> {
    Ok(match kind {
        StrategyKind::Main => Box::new(main_schedule(instance, solver, seed)?),
        StrategyKind::Instant => Box::new(pi_instant(instance, &solver.local_search_epsilon).stage("schedule")?),
        StrategyKind::Fixed => Box::new(pi_fixed(instance, OrderMode::HalfThreshold).stage("schedule")?),
        StrategyKind::FixedHeuristic => Box::new(pi_fixed(instance, OrderMode::HeuristicOrder).stage("schedule")?),
        StrategyKind::Weitzman => Box::new(weitzman_baseline(instance).stage("schedule")?),
    })
}

/// Exact evaluation, falling back to Monte Carlo when the outcome tree is
/// too large.
pub fn evaluate(instance: &Instance, strategy: &dyn Strategy, trials: usize, seed: u64) -> Result<EvalReport> {
    match EvalReport::exact(instance, strategy) {
        Err(Error::Capacity { .. }) => monte_carlo(instance, strategy, trials, seed),
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub solver: SolverConfig,
    pub seed: u64,
    pub with_oracle: bool,
    pub guards: OracleGuards,
    /// Monte Carlo trials when exact evaluation is out of reach.
    pub trials: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { solver: SolverConfig::default(), seed: 0, with_oracle: false, guards: OracleGuards::default(), trials: 100_000 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InstanceSummary {
    pub n: usize,
    pub horizon: usize,
    pub variant: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReservationRow {
    pub box_idx: usize,
    pub time: usize,
    pub r: String,
    pub expected_y: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypergraphSummary {
    pub left_count: usize,
    pub right_count: usize,
    pub edges: usize,
    pub density: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct FractionalSummary {
    pub b: String,
    pub steps: usize,
    pub value: f64,
    pub heuristic_direction: bool,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EdgeRow {
    pub edge: usize,
    pub box_idx: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MatchingSummary {
    pub edges: Vec<EdgeRow>,
    pub f_value: String,
    /// Best matching value by enumeration, when the hypergraph is small enough.
    pub f_optimum: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl BoundCheck {
    fn at_least(name: &'static str, lhs: &Rational, rhs: &Rational) -> Self {
        Self { name, lhs: to_f64(lhs), rhs: to_f64(rhs), pass: lhs >= rhs }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleSummary {
    pub optimal_value: String,
    pub ratio: f64,
    pub guarantee: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub instance: InstanceSummary,
    pub seed: u64,
    pub reservation: Vec<ReservationRow>,
    pub hypergraph: HypergraphSummary,
    pub fractional: FractionalSummary,
    pub matching: MatchingSummary,
    pub tau: String,
    pub evaluation: EvalReport,
    pub bound_checks: Vec<BoundCheck>,
    pub oracle: Option<OracleSummary>,
}

pub fn run_pipeline(instance: &Instance, config: &PipelineConfig) -> Result<PipelineReport> {
    let out = solve(instance, &config.solver, config.seed)?;
    let h = &out.hypergraph;
    let schedule = pi_main_schedule(h, &out.matching).stage("schedule")?;
    let evaluation = evaluate(instance, &schedule, config.trials, config.seed).stage("evaluate")?;

    let reservation = reservation_table(instance)
        .into_iter()
        .map(|ri| ReservationRow {
            box_idx: ri.box_idx,
            time: ri.time.unwrap_or(0),
            r: format_rational(&ri.r),
            expected_y: format_rational(&ri.y_law.expectation()),
        })
        .collect();

    let f_optimum = if h.edges.len() <= MAX_ENUMERATION_EDGES {
        Some(brute_force_best_matching(&out.objective, h).stage("brute_force")?.1)
    } else {
        None
    };

    let mut checks = vec![BoundCheck {
        name: "fractional_point_in_scaled_polytope",
        lhs: 1.0,
        rhs: 1.0,
        pass: h.in_scaled_polytope(&out.fractional.x, &out.fractional.b),
    }];
    let utility_estimate = match &evaluation.expected_utility {
        Some(v) => v.clone(),
        None => crate::rational::from_f64(evaluation.mean + 4.0 * evaluation.stderr)?,
    };
    checks.push(BoundCheck::at_least("utility_at_least_half_matching_value", &utility_estimate, &schedule.tau));
    if let Some(fopt) = &f_optimum {
        let b = to_f64(&out.fractional.b);
        let factor = 1.0 - (-b).exp() - 0.02;
        checks.push(BoundCheck {
            name: "continuous_greedy_quality",
            lhs: out.fractional.value,
            rhs: factor * to_f64(fopt),
            pass: out.fractional.value >= factor * to_f64(fopt) - 1e-9,
        });
    }

    let oracle = if config.with_oracle {
        let res = optimal_adaptive_oracle(instance, &config.guards).stage("oracle")?;
        let opt = res.optimal_value;
        if let Some(fopt) = &f_optimum {
            checks.push(BoundCheck::at_least("twice_best_matching_bounds_optimum", &(fopt * Rational::from_integer(2.into())), &opt));
            if !out.f_matching.is_zero() {
                // E[u] >= OPT / (4 α) with α = f(M*) / f(M)
                let rhs = &opt * &out.f_matching / (fopt * Rational::from_integer(4.into()));
                checks.push(BoundCheck::at_least("utility_against_observed_approximation", &utility_estimate, &rhs));
            }
        }
        let guarantee = 1.0 / 21.3;
        let row = ComparisonRow::new("", "main", &utility_estimate, &opt, Some(guarantee));
        Some(OracleSummary { optimal_value: format_rational(&opt), ratio: row.ratio, guarantee, pass: row.pass == "pass" })
    } else {
        None
    };

    Ok(PipelineReport {
        instance: InstanceSummary { n: instance.n(), horizon: instance.horizon, variant: instance.variant.to_string() },
        seed: config.seed,
        reservation,
        hypergraph: HypergraphSummary {
            left_count: h.left_count,
            right_count: h.right_count,
            edges: h.edges.len(),
            density: format_rational(&h.density()),
        },
        fractional: FractionalSummary {
            b: format_rational(&out.fractional.b),
            steps: config.solver.mcg_steps,
            value: out.fractional.value,
            heuristic_direction: out.fractional.heuristic_direction,
            x: out.fractional.x_f64(),
        },
        matching: MatchingSummary {
            edges: out
                .matching
                .edges
                .iter()
                .map(|&e| EdgeRow { edge: e, box_idx: h.edges[e].box_idx, start: h.edges[e].start, end: h.edges[e].end })
                .collect(),
            f_value: format_rational(&out.f_matching),
            f_optimum: f_optimum.as_ref().map(format_rational),
        },
        tau: format_rational(&schedule.tau),
        evaluation,
        bound_checks: checks,
        oracle,
    })
}

/// Exact value of each strategy against the oracle on one instance.
pub fn compare(
    instance_id: &str,
    instance: &Instance,
    strategies: &[StrategyKind],
    config: &PipelineConfig,
) -> Result<Vec<ComparisonRow>> {
    instance.ensure_valid().stage("validate")?;
    let opt = optimal_adaptive_oracle(instance, &config.guards).stage("oracle")?.optimal_value;
    strategies
        .iter()
        .map(|&kind| {
            let s = build_strategy(instance, kind, &config.solver, config.seed)?;
            let v = exact_expected_utility(instance, s.as_ref()).stage("evaluate")?;
            Ok(ComparisonRow::new(instance_id, kind.name(), &v, &opt, kind.guarantee()))
        })
        .collect()
}

/// [`compare`] over many instances in parallel; rows keep input order.
pub fn batch(instances: &[(String, Instance)], strategies: &[StrategyKind], config: &PipelineConfig) -> Result<Vec<ComparisonRow>> {
    let per_instance: Vec<Vec<ComparisonRow>> = instances
        .par_iter()
        .map(|(id, inst)| compare(id, inst, strategies, config))
        .collect::<Result<_>>()?;
    Ok(per_instance.into_iter().flatten().collect())
}
