use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pandora_core::crs::{crs_audit, monotonicity_audit, scale_into_polytope};
use pandora_core::engine::{
    exact_trace_distribution, monte_carlo, optimal_adaptive_oracle, EvalReport, OracleGuards, PolicyNode,
};
use pandora_core::error::{Error, Result};
use pandora_core::generate::{generate, DiscountKind, GeneratorParams};
use pandora_core::hypergraph::build;
use pandora_core::indices::reservation_table;
use pandora_core::io::{instance_to_json, load_instance};
use pandora_core::pipeline::{batch, build_strategy, compare, run_pipeline, solve, PipelineConfig};
use pandora_core::rational::{format_rational, parse_rational, to_f64};
use pandora_core::strategies::{RngSource, StrategyKind, StrategyTrace};
use pandora_core::submodular::SolverConfig;
use pandora_core::{Instance, Variant};

#[derive(Parser)]
#[command(name = "pandora", version, about = "Inspection strategies for Pandora boxes with time-dependent costs and rewards")]
struct Cli {
    /// Master seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random instance.
    Generate(GenArgs),
    /// Reservation value of every inspectable (box, round) slot.
    Reservation { instance: PathBuf },
    /// Edges of the block hypergraph.
    Hypergraph { instance: PathBuf },
    /// Continuous greedy plus contention-resolution rounding.
    Solve {
        instance: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Empirical balance and monotonicity audit of the rounding scheme.
    CrsAudit {
        instance: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        /// Audit the continuous-greedy point, or a point scaled so the busiest constraint is tight.
        #[arg(long, value_enum, default_value_t = AuditPoint::Mcg)]
        point: AuditPoint,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Evaluate one strategy.
    Run {
        instance: PathBuf,
        #[arg(long)]
        strategy: String,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        /// Enumerate every outcome instead of sampling.
        #[arg(long)]
        exact: bool,
        /// Write one CSV row per inspection of every trace.
        #[arg(long)]
        dump_traces: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Optimal adaptive value by exhaustive search.
    Oracle {
        instance: PathBuf,
        /// Ignore the size guards.
        #[arg(long = "unsafe")]
        unchecked: bool,
    },
    /// Exact strategy values against the oracle.
    Compare {
        instance: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "main")]
        strategies: Vec<String>,
        #[arg(long = "unsafe")]
        unchecked: bool,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// `compare` over many instances, given as files or generated.
    Batch {
        instances: Vec<PathBuf>,
        /// Generate this many instances from the generator flags instead.
        #[arg(long)]
        generate: Option<usize>,
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long, value_delimiter = ',', default_value = "main")]
        strategies: Vec<String>,
        #[arg(long = "unsafe")]
        unchecked: bool,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Full run with every intermediate value.
    Pipeline {
        instance: PathBuf,
        /// Also run the oracle and check the guarantee.
        #[arg(long)]
        oracle: bool,
        #[arg(long = "unsafe")]
        unchecked: bool,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[command(flatten)]
        solver: SolverArgs,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AuditPoint {
    Mcg,
    Tight,
}

#[derive(Args, Clone)]
struct GenArgs {
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 1)]
    max_p: usize,
    #[arg(long, default_value_t = 2)]
    support: usize,
    #[arg(long, default_value_t = 10)]
    max_value: u32,
    #[arg(long, default_value_t = 0)]
    cost_min: u32,
    #[arg(long, default_value_t = 3)]
    cost_max: u32,
    #[arg(long, default_value_t = 0.0)]
    absent_prob: f64,
    /// identity, commit, multiplicative, table or mixed.
    #[arg(long, default_value = "mixed")]
    discount: String,
    #[arg(long, value_enum, default_value_t = VariantArg::General)]
    variant: VariantArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    General,
    Instant,
    Fixed,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Polytope scale for continuous greedy.
    #[arg(long, default_value = "5227/10000")]
    b: String,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 50)]
    repeats: usize,
    /// Local-search improvement slack.
    #[arg(long, default_value = "1/8")]
    epsilon: String,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            b: parse_rational(&self.b)?,
            mcg_steps: self.steps,
            rounding_repeats: self.repeats,
            local_search_epsilon: parse_rational(&self.epsilon)?,
            ..SolverConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl GenArgs {
    fn params(&self) -> Result<GeneratorParams> {
        Ok(GeneratorParams {
            n: self.n,
            horizon: self.horizon,
            max_processing: self.max_p,
            support: self.support,
            max_value: self.max_value,
            cost_min: self.cost_min,
            cost_max: self.cost_max,
            absent_prob: self.absent_prob,
            discount: self.discount.parse::<DiscountKind>()?,
            variant: match self.variant {
                VariantArg::General => Variant::General,
                VariantArg::Instant => Variant::Instant,
                VariantArg::Fixed => Variant::Fixed,
            },
        })
    }
}

fn guards(unchecked: bool) -> Result<OracleGuards> {
    let mut g = OracleGuards::from_env()?;
    g.unchecked = unchecked;
    Ok(g)
}

fn read_instance(path: &Path) -> Result<Instance> {
    let inst = load_instance(path)?;
    inst.ensure_valid()?;
    Ok(inst)
}

fn parse_strategies(names: &[String]) -> Result<Vec<StrategyKind>> {
    names.iter().map(|n| n.parse()).collect()
}

struct Output {
    format: Format,
    sink: Box<dyn Write>,
}

impl Output {
    fn open(format: Format, path: Option<&Path>) -> Result<Self> {
        let sink: Box<dyn Write> = match path {
            Some(p) => Box::new(io::BufWriter::new(File::create(p)?)),
            None => Box::new(io::BufWriter::new(io::stdout())),
        };
        Ok(Self { format, sink })
    }

    /// Writes `rows` as CSV, or `whole` as JSON.
    fn emit<R: Serialize, W: Serialize>(&mut self, rows: &[R], whole: &W) -> Result<()> {
        match self.format {
            Format::Csv => write_csv(&mut self.sink, rows)?,
            Format::Json => {
                serde_json::to_writer_pretty(&mut self.sink, whole)?;
                self.sink.write_all(b"\n")?;
            }
        }
        self.sink.flush()?;
        Ok(())
    }

    fn text(&mut self, text: &str) -> Result<()> {
        self.sink.write_all(text.as_bytes())?;
        self.sink.flush()?;
        Ok(())
    }
}

fn write_csv<R: Serialize>(sink: &mut dyn Write, rows: &[R]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct HypergraphEdgeRow {
    edge: usize,
    box_idx: usize,
    start: usize,
    end: usize,
    cost: String,
    r: String,
    expected_y: String,
}

#[derive(Serialize)]
struct HypergraphReport<'a> {
    left_count: usize,
    right_count: usize,
    density: String,
    edges: &'a [HypergraphEdgeRow],
}

#[derive(Serialize)]
struct SolveRow {
    edge: usize,
    box_idx: usize,
    start: usize,
    end: usize,
    x: f64,
    in_matching: bool,
}

#[derive(Serialize)]
struct SolveReport<'a> {
    fractional_value: f64,
    heuristic_direction: bool,
    f_matching: String,
    matching: &'a [usize],
    edges: &'a [SolveRow],
}

#[derive(Serialize)]
struct TraceRow {
    trace: usize,
    probability: String,
    box_idx: Option<usize>,
    time: Option<usize>,
    value: Option<String>,
    cost: Option<String>,
    halted_at: usize,
    utility: String,
}

fn trace_rows(k: usize, probability: String, t: &StrategyTrace, out: &mut Vec<TraceRow>) {
    let row = |b: Option<usize>, time: Option<usize>, v: Option<String>, c: Option<String>| TraceRow {
        trace: k,
        probability: probability.clone(),
        box_idx: b,
        time,
        value: v,
        cost: c,
        halted_at: t.halted_at,
        utility: format_rational(&t.utility),
    };
    if t.inspected.is_empty() {
        out.push(row(None, None, None, None));
    }
    for ins in &t.inspected {
        out.push(row(Some(ins.box_idx), Some(ins.time), Some(format_rational(&ins.value)), Some(format_rational(&ins.cost))));
    }
}

#[derive(Serialize)]
struct OracleRow {
    optimal_value: String,
    optimal_value_f64: f64,
    states_explored: usize,
}

#[derive(Serialize)]
struct OracleReport<'a> {
    optimal_value: String,
    states_explored: usize,
    policy: &'a PolicyNode,
}

fn run(cli: Cli) -> Result<()> {
    let mut out = Output::open(cli.format, cli.out.as_deref())?;
    let seed = cli.seed;
    match cli.command {
        Command::Generate(args) => {
            let inst = generate(&args.params()?, seed)?;
            out.text(&instance_to_json(&inst))
        }
        Command::Reservation { instance } => {
            let inst = read_instance(&instance)?;
            let rows: Vec<_> = reservation_table(&inst)
                .into_iter()
                .map(|ri| pandora_core::pipeline::ReservationRow {
                    box_idx: ri.box_idx,
                    time: ri.time.unwrap_or(0),
                    r: format_rational(&ri.r),
                    expected_y: format_rational(&ri.y_law.expectation()),
                })
                .collect();
            out.emit(&rows, &rows)
        }
        Command::Hypergraph { instance } => {
            let inst = read_instance(&instance)?;
            let h = build(&inst);
            let rows: Vec<HypergraphEdgeRow> = h
                .edges
                .iter()
                .map(|e| HypergraphEdgeRow {
                    edge: e.id,
                    box_idx: e.box_idx,
                    start: e.start,
                    end: e.end,
                    cost: format_rational(&e.cost),
                    r: format_rational(&e.r),
                    expected_y: format_rational(&e.y_law.expectation()),
                })
                .collect();
            let report = HypergraphReport {
                left_count: h.left_count,
                right_count: h.right_count,
                density: format_rational(&h.density()),
                edges: &rows,
            };
            out.emit(&rows, &report)
        }
        Command::Solve { instance, solver } => {
            let inst = read_instance(&instance)?;
            let s = solve(&inst, &solver.config()?, seed)?;
            let x = s.fractional.x_f64();
            let rows: Vec<SolveRow> = s
                .hypergraph
                .edges
                .iter()
                .map(|e| SolveRow {
                    edge: e.id,
                    box_idx: e.box_idx,
                    start: e.start,
                    end: e.end,
                    x: x[e.id],
                    in_matching: s.matching.edges.contains(&e.id),
                })
                .collect();
            let report = SolveReport {
                fractional_value: s.fractional.value,
                heuristic_direction: s.fractional.heuristic_direction,
                f_matching: format_rational(&s.f_matching),
                matching: &s.matching.edges,
                edges: &rows,
            };
            out.emit(&rows, &report)
        }
        Command::CrsAudit { instance, trials, pairs, point, solver } => {
            let inst = read_instance(&instance)?;
            let cfg = solver.config()?;
            let h = build(&inst);
            let b = to_f64(&cfg.b);
            let x = match point {
                AuditPoint::Mcg => solve(&inst, &cfg, seed)?.fractional.x_f64(),
                AuditPoint::Tight => scale_into_polytope(&h, &vec![1.0; h.edges.len()], b),
            };
            let report = crs_audit(&h, &x, b, trials, seed);
            let mono = monotonicity_audit(&h, &x, pairs, seed);
            #[derive(Serialize)]
            struct Full<'a> {
                audit: &'a pandora_core::crs::AuditReport,
                monotonicity: &'a pandora_core::crs::MonotonicityReport,
            }
            out.emit(&report.rows, &Full { audit: &report, monotonicity: &mono })
        }
        Command::Run { instance, strategy, trials, exact, dump_traces, solver } => {
            let inst = read_instance(&instance)?;
            let kind: StrategyKind = strategy.parse()?;
            let s = build_strategy(&inst, kind, &solver.config()?, seed)?;
            let report = if exact { EvalReport::exact(&inst, s.as_ref())? } else { monte_carlo(&inst, s.as_ref(), trials, seed)? };
            if let Some(path) = dump_traces {
                let mut rows = Vec::new();
                if exact {
                    for (k, (p, t)) in exact_trace_distribution(&inst, s.as_ref())?.iter().enumerate() {
                        trace_rows(k, format_rational(p), t, &mut rows);
                    }
                } else {
                    for k in 0..trials {
                        let mut src = RngSource::new(pandora_core::crs::substream(seed, k as u64, 0));
                        let t = s.execute(&inst, &mut src)?;
                        trace_rows(k, String::new(), &t, &mut rows);
                    }
                }
                write_csv(&mut io::BufWriter::new(File::create(path)?), &rows)?;
            }
            out.emit(std::slice::from_ref(&report), &report)
        }
        Command::Oracle { instance, unchecked } => {
            let inst = read_instance(&instance)?;
            let res = optimal_adaptive_oracle(&inst, &guards(unchecked)?)?;
            let row = OracleRow {
                optimal_value: format_rational(&res.optimal_value),
                optimal_value_f64: to_f64(&res.optimal_value),
                states_explored: res.states_explored,
            };
            let report = OracleReport { optimal_value: row.optimal_value.clone(), states_explored: res.states_explored, policy: &res.policy };
            out.emit(&[row], &report)
        }
        Command::Compare { instance, strategies, unchecked, solver } => {
            let inst = read_instance(&instance)?;
            let cfg = PipelineConfig { solver: solver.config()?, seed, guards: guards(unchecked)?, ..PipelineConfig::default() };
            let id = instance.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            let rows = compare(&id, &inst, &parse_strategies(&strategies)?, &cfg)?;
            out.emit(&rows, &rows)
        }
        Command::Batch { instances, generate: count, gen, strategies, unchecked, solver } => {
            let cfg = PipelineConfig { solver: solver.config()?, seed, guards: guards(unchecked)?, ..PipelineConfig::default() };
            let mut items: Vec<(String, Instance)> = Vec::new();
            for path in &instances {
                let id = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
                items.push((id, read_instance(path)?));
            }
            if let Some(count) = count {
                let params = gen.params()?;
                for k in 0..count {
                    let s = seed.wrapping_add(k as u64);
                    items.push((format!("gen-{s}"), generate(&params, s)?));
                }
            }
            let rows = batch(&items, &parse_strategies(&strategies)?, &cfg)?;
            if rows.is_empty() && out.format == Format::Csv {
                return out.text("instance_id,strategy,value,oracle,ratio,guarantee_bound,pass\n");
            }
            out.emit(&rows, &rows)
        }
        Command::Pipeline { instance, oracle, unchecked, trials, solver } => {
            let inst = read_instance(&instance)?;
            let cfg = PipelineConfig { solver: solver.config()?, seed, with_oracle: oracle, guards: guards(unchecked)?, trials };
            let report = run_pipeline(&inst, &cfg)?;
            out.emit(&report.bound_checks, &report)
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Validation(_) | Error::Structural(_) | Error::Precondition(_) | Error::Json(_) => 2,
        Error::Capacity { .. } => 3,
        Error::Invariant(_) | Error::Contract(_) | Error::Exhausted(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
