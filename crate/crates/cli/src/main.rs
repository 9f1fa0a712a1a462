//! `nova` — placement and parallelization experiments for geo-distributed
//! streaming joins. Human-readable logs go to stderr; machine output (JSON,
//! CSV) goes to files or stdout.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nova_core::baselines::Strategy;
use nova_core::costspace::{embed_mds, embed_vivaldi, embedding_error, Coordinates, EmbedConfig};
use nova_core::error::Error;
use nova_core::eval::{evaluate, LatencyView};
use nova_core::experiment::{run_experiment, write_csv, ExperimentSpec};
use nova_core::placement::{FallbackPolicy, NovaConfig, PlacementFile, SigmaMode};
use nova_core::plan::PlanSpec;
use nova_core::reopt::{
    build_bench_state, load_event_script, reopt_benchmark, sample_event, BenchSetup, ChangeEvent,
};
use nova_core::spatial::IndexMode;
use nova_core::topology::{
    generate_synthetic, load_latency_matrix, load_topology, LatencySource, MatrixFormat,
    SyntheticSpec, Topology,
};

#[derive(Parser)]
#[command(
    name = "nova",
    about = "Latency-optimal placement and parallelization of geo-distributed streaming joins",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a latency matrix or synthetic topology into the cost space.
    Embed(EmbedArgs),
    /// Place a join plan on a topology with one strategy.
    Place(PlaceArgs),
    /// Run a strategy-comparison experiment from a JSON spec.
    Compare(CompareArgs),
    /// Time the standard re-optimization events across topology sizes.
    ReoptBench(ReoptBenchArgs),
    /// Time full placements across topology sizes.
    ScaleBench(ScaleBenchArgs),
    /// Print the bundled 14-node walkthrough.
    Example,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedMethodArg {
    Mds,
    Vivaldi,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Whitespace,
    Csv,
}

#[derive(Args)]
struct EmbedArgs {
    /// Latency matrix file (whitespace grid or CSV).
    #[arg(long, conflicts_with = "synthetic")]
    latency: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "whitespace")]
    format: FormatArg,
    /// Synthetic spec, e.g. "n=1000,clusters=5,std=8,seed=42".
    #[arg(long)]
    synthetic: Option<String>,
    #[arg(long, value_enum, default_value = "vivaldi")]
    method: EmbedMethodArg,
    /// Vivaldi neighbor count.
    #[arg(short, long, default_value_t = 20)]
    m: usize,
    /// Embedding dimension.
    #[arg(short, long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Pairs sampled for the error statistics line.
    #[arg(long, default_value_t = 10_000)]
    sample_pairs: usize,
    /// Output coordinates file (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlaceArgs {
    #[arg(long)]
    topology: PathBuf,
    #[arg(long)]
    coords: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, default_value = "nova")]
    strategy: String,
    /// Partitioning factor in [0,1], or "auto" to derive it from --tb.
    #[arg(long, default_value = "0.4")]
    sigma: String,
    /// Bandwidth threshold (tuples/sec) for --sigma auto.
    #[arg(long, default_value_t = 0.0)]
    tb: f64,
    /// Minimum residual capacity for candidate nodes.
    #[arg(long, default_value_t = 1.0)]
    cmin: f64,
    /// Fixed candidate count (overrides the capacity-ratio heuristic).
    #[arg(short, long)]
    k: Option<usize>,
    #[arg(long, value_enum, default_value = "expand-k")]
    fallback: FallbackArg,
    /// Cluster count for the cl-sf / cl-tree-sf baselines.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value = "true-latency")]
    latency_mode: LatencyModeArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FallbackArg {
    SpreadEven,
    ExpandK,
}

#[derive(Clone, Copy, ValueEnum)]
enum LatencyModeArg {
    /// Cost-space distances.
    Estimated,
    /// Measured latencies.
    TrueLatency,
}

#[derive(Args)]
struct CompareArgs {
    /// Experiment spec (JSON).
    #[arg(long)]
    experiment: PathBuf,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_json: Option<PathBuf>,
}

#[derive(Args)]
struct ReoptBenchArgs {
    /// Comma-separated topology sizes.
    #[arg(long, default_value = "1000,10000,100000")]
    sizes: String,
    /// Event script (JSON lines); template lines sample targets per size.
    #[arg(long)]
    events: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Repetitions per event; the minimum time is reported.
    #[arg(long, default_value_t = 9)]
    reps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScaleBenchArgs {
    #[arg(long, default_value = "10000,100000")]
    sizes: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(short, long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Embed(args) => cmd_embed(args),
        Command::Place(args) => cmd_place(args),
        Command::Compare(args) => cmd_compare(args),
        Command::ReoptBench(args) => cmd_reopt_bench(args),
        Command::ScaleBench(args) => cmd_scale_bench(args),
        Command::Example => cmd_example(),
    }
}

fn parse_synthetic(text: &str) -> Result<SyntheticSpec, Error> {
    let mut spec = SyntheticSpec::default();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("bad synthetic field '{part}'")))?;
        fn field<T: std::str::FromStr>(part: &str, value: &str) -> Result<T, Error> {
            value
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad value in '{part}'")))
        }
        match key {
            "n" | "n_nodes" => spec.n_nodes = field(part, value)?,
            "clusters" | "n_clusters" => spec.n_clusters = field(part, value)?,
            "std" | "cluster_std" => spec.cluster_std = field(part, value)?,
            "seed" => spec.seed = field(part, value)?,
            other => {
                return Err(Error::InvalidInput(format!("unknown synthetic field '{other}'")))
            }
        }
    }
    Ok(spec)
}

fn parse_sizes(text: &str) -> Result<Vec<usize>, Error> {
    let sizes: Vec<usize> = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad size '{s}'")))
        })
        .collect::<Result<_, _>>()?;
    if sizes.is_empty() {
        return Err(Error::InvalidInput("no sizes given".into()));
    }
    Ok(sizes)
}

fn cmd_embed(args: EmbedArgs) -> Result<(), Error> {
    let cfg = EmbedConfig {
        dim: args.d,
        neighbors: args.m,
        iterations: args.iters,
        seed: args.seed,
        ..Default::default()
    };
    let (latency, label): (LatencySource, String) = match (&args.latency, &args.synthetic) {
        (Some(path), None) => {
            let format = match args.format {
                FormatArg::Whitespace => MatrixFormat::Whitespace,
                FormatArg::Csv => MatrixFormat::Csv,
            };
            let (matrix, warnings) = load_latency_matrix(path, format)?;
            if warnings > 0 {
                eprintln!("symmetrized {warnings} asymmetric latency entries");
            }
            (LatencySource::Dense(matrix), path.display().to_string())
        }
        (None, Some(spec)) => {
            let topo = generate_synthetic(&parse_synthetic(spec)?)?;
            (topo.latency, format!("synthetic({spec})"))
        }
        _ => {
            return Err(Error::InvalidInput(
                "exactly one of --latency or --synthetic is required".into(),
            ))
        }
    };
    let started = Instant::now();
    let coords = match args.method {
        EmbedMethodArg::Mds => {
            let dense = match &latency {
                LatencySource::Dense(m) => m.clone(),
                LatencySource::Points(_) => latency.to_dense(cfg.dense_limit)?,
            };
            let result = embed_mds(&dense, &cfg)?;
            eprintln!("stress {:.6e} after {} iterations", result.stress, result.iterations);
            result.coords
        }
        EmbedMethodArg::Vivaldi => embed_vivaldi(&latency, &cfg)?,
    };
    let elapsed = started.elapsed().as_secs_f64();
    coords.save(&args.out)?;
    if coords.len() >= 2 {
        let stats = embedding_error(&coords, &latency, args.sample_pairs, args.seed)?;
        eprintln!(
            "embedded {} ({} nodes, d={}) in {:.2}s: MAE {:.3} ms, median relative error {:.2}%",
            label,
            coords.len(),
            args.d,
            elapsed,
            stats.mae,
            100.0 * stats.relative_error_median
        );
    }
    Ok(())
}

fn load_coords_for(topology: &Topology, path: &Path) -> Result<Coordinates, Error> {
    let coords = Coordinates::load(path)?;
    if coords.len() != topology.len() {
        return Err(Error::InvalidInput(format!(
            "coordinates cover {} nodes but the topology has {}",
            coords.len(),
            topology.len()
        )));
    }
    Ok(coords)
}

fn cmd_place(args: PlaceArgs) -> Result<(), Error> {
    let strategy = Strategy::parse(&args.strategy)?;
    let topology = load_topology(&args.topology)?;
    let coords = load_coords_for(&topology, &args.coords)?;
    let plan_spec = PlanSpec::load(&args.plan)?;
    let sigma = match args.sigma.as_str() {
        "auto" => SigmaMode::Auto { t_b: args.tb },
        fixed => {
            let v: f64 = fixed
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad sigma '{fixed}'")))?;
            SigmaMode::Fixed { sigma: v }
        }
    };
    let config = NovaConfig {
        sigma,
        c_min: args.cmin,
        k_override: args.k,
        fallback: match args.fallback {
            FallbackArg::SpreadEven => FallbackPolicy::SpreadEven,
            FallbackArg::ExpandK => FallbackPolicy::ExpandK,
        },
        knn_mode: if topology.len() >= 50_000 {
            IndexMode::Approximate
        } else {
            IndexMode::Exact
        },
        ..Default::default()
    };
    let started = Instant::now();
    let (placement, plan) = nova_core::baselines::run_strategy(
        strategy,
        &topology,
        &coords,
        &plan_spec,
        &config,
        args.clusters,
        args.seed,
    )?;
    let opt_time = started.elapsed().as_secs_f64();
    let view = match args.latency_mode {
        LatencyModeArg::Estimated => LatencyView::Estimated(&coords),
        LatencyModeArg::TrueLatency => LatencyView::True(&topology.latency),
    };
    let report = evaluate(&placement, &plan, &topology, &view, config.selectivity)?;
    std::fs::write(&args.out, serde_json::to_string_pretty(&PlacementFile::from(&placement))?)?;
    eprintln!(
        "{}: overload {:.1}%, mean {:.1} ms, p90 {:.1} ms, bandwidth {:.1} tuples/s, {:.3}s",
        strategy,
        report.overload_pct,
        report.stats.mean,
        report.stats.p90,
        report.bandwidth.total(),
        opt_time
    );
    Ok(())
}

fn threads_from_env() -> usize {
    std::env::var("NOVA_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
}

fn cmd_compare(args: CompareArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.experiment)?;
    let spec: ExperimentSpec = serde_json::from_str(&text)?;
    let report = run_experiment(&spec, threads_from_env())?;
    match &args.out_csv {
        Some(path) => {
            let file = std::fs::File::create(path)?;
            write_csv(&report, file)?;
            eprintln!("wrote {} rows to {}", report.rows.len(), path.display());
        }
        None => write_csv(&report, std::io::stdout().lock())?,
    }
    if let Some(path) = &args.out_json {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn cmd_reopt_bench(args: ReoptBenchArgs) -> Result<(), Error> {
    let sizes = parse_sizes(&args.sizes)?;
    let script = load_event_script(&args.events)?;
    let setup = BenchSetup { sizes: sizes.clone(), seed: args.seed, reps: args.reps, ..Default::default() };

    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(std::fs::File::create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "n_nodes,event,event_time_s,full_time_s")?;

    if script.is_empty() {
        // Template-free script: fall back to the standard five events.
        for row in reopt_benchmark(&setup)? {
            writeln!(
                out,
                "{},{},{:.6},{:.3}",
                row.n_nodes, row.event, row.event_time_s, row.full_time_s
            )?;
        }
        return Ok(());
    }

    use rand::SeedableRng;
    for &n in &sizes {
        let (mut state, full_time) = build_bench_state(n, args.seed, &setup)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed ^ n as u64);
        for event in &script {
            let concrete = materialize(&state, event, &mut rng)?;
            let stats = state.apply_event(&concrete)?;
            writeln!(
                out,
                "{},{},{:.6},{:.3}",
                n,
                stats.event,
                stats.elapsed.as_secs_f64(),
                full_time
            )?;
        }
    }
    Ok(())
}

/// Script events may name concrete nodes (replayed verbatim) or act as
/// templates whose targets are sampled against the current state.
fn materialize(
    state: &nova_core::reopt::OptimizerState,
    event: &ChangeEvent,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<ChangeEvent, Error> {
    let is_template = match event {
        ChangeEvent::AddWorker { probes, .. } | ChangeEvent::AddSource { probes, .. } => {
            probes.is_empty()
        }
        ChangeEvent::RemoveSource { node }
        | ChangeEvent::RemoveWorker { node }
        | ChangeEvent::RemoveJoinNode { node }
        | ChangeEvent::UpdateCoordinates { node, .. }
        | ChangeEvent::ChangeDataRate { node, .. }
        | ChangeEvent::ChangeCapacity { node, .. } => node.0 == u32::MAX,
    };
    if is_template {
        sample_event(state, event.kind(), rng)
    } else {
        Ok(event.clone())
    }
}

fn cmd_scale_bench(args: ScaleBenchArgs) -> Result<(), Error> {
    use nova_core::experiment::{apply_budget, CapacityBudget};
    use nova_core::placement::nova_place;
    use nova_core::topology::{assign_workload, SourceCapacity, WorkloadSpec};

    let sizes = parse_sizes(&args.sizes)?;
    let mut out = String::from("n_nodes,gen_s,embed_s,place_s,total_s,pairs,groups\n");
    for &n in &sizes {
        let t0 = Instant::now();
        let synth = SyntheticSpec { n_nodes: n, seed: args.seed, ..Default::default() };
        let bare = generate_synthetic(&synth)?;
        let workload = WorkloadSpec {
            capacity_mean_target: None,
            source_capacity: SourceCapacity::FromDist,
            seed: args.seed,
            ..Default::default()
        };
        let mut topology = assign_workload(&bare, &workload)?;
        let plan_spec = PlanSpec::from_topology(&topology, nova_core::plan::Pairing::Regional, args.seed ^ 0x5EED)?;
        let config = NovaConfig {
            knn_mode: if n >= 50_000 { IndexMode::Approximate } else { IndexMode::Exact },
            record_audit: false,
            ..Default::default()
        };
        apply_budget(
            &mut topology,
            &plan_spec,
            &config.sigma,
            CapacityBudget::PartitionedMargin { margin: 2.0 },
        );
        let gen_s = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let cfg = EmbedConfig {
            neighbors: args.m,
            iterations: args.iters,
            seed: args.seed ^ 0xE33B,
            ..Default::default()
        };
        let coords = embed_vivaldi(&topology.latency, &cfg)?;
        let embed_s = t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        let outcome = nova_place(&topology, &coords, &plan_spec, &config)?;
        let place_s = t2.elapsed().as_secs_f64();
        let total_s = t0.elapsed().as_secs_f64();
        eprintln!(
            "n={n}: gen {gen_s:.2}s, embed {embed_s:.2}s, place {place_s:.2}s (total {total_s:.2}s)"
        );
        out.push_str(&format!(
            "{n},{gen_s:.4},{embed_s:.4},{place_s:.4},{total_s:.4},{},{}\n",
            outcome.plan.pairs.len(),
            outcome.placement.groups.len()
        ));
    }
    match &args.out {
        Some(path) => std::fs::write(path, out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn cmd_example() -> Result<(), Error> {
    use nova_core::demo;
    use nova_core::eval::pair_latency;

    let topology = demo::topology();
    let spec = demo::plan_spec();
    let config = demo::config();

    println!("topology: 6 sources (25 tuples/s each), 7 workers, 1 sink");
    println!("  region 1: t1, t2 join w1 near A|55, B|40, C|40");
    println!("  region 2: t3, t4 join w2 near G|200, F|20");
    println!("  cloud: E|1000 behind D|30; sink capacity 20");
    println!();

    let dense = topology.latency.to_dense(100)?;
    let embed = embed_mds(&dense, &EmbedConfig { iterations: 500, ..Default::default() })?;
    println!("phase 1: embedded 14 nodes, stress {:.2e}", embed.stress);

    let outcome =
        nova_core::placement::nova_place(&topology, &embed.coords, &spec, &config)?;
    println!("phase 2: virtual optima (geometric medians of source/source/sink anchors)");
    for (idx, obj) in outcome.virt.objectives.iter().enumerate() {
        println!("  j{}: anchor distance sum {:.1} ms", idx + 1, obj);
    }
    println!("phase 3: physical assignment (k=2, C_min=15, sigma=0)");
    for g in &outcome.placement.groups {
        if g.subs.len() == 1 {
            println!("  j{} -> {} (whole, C_r {})", g.pair + 1, demo::node_name(g.node), g.c_r);
        } else {
            println!(
                "  j{} -> {} ({} merged unit sub-replicas)",
                g.pair + 1,
                demo::node_name(g.node),
                g.subs.len()
            );
        }
    }
    for f in &outcome.placement.fallbacks {
        println!("  fallback: {f:?}");
    }
    let over: Vec<&str> =
        outcome.placement.overloaded.iter().map(|&n| demo::node_name(n)).collect();
    println!("  overloaded nodes: {over:?}");

    let lat = pair_latency(
        &outcome.placement,
        &outcome.plan,
        &LatencyView::True(&topology.latency),
    )?;
    println!();
    println!(
        "end-to-end: region 1 = {:.0} ms, region 2 = {:.0} ms",
        lat.per_pair[0].max(lat.per_pair[1]),
        lat.per_pair[2].max(lat.per_pair[3])
    );

    let plan = nova_core::plan::resolve_operators(&spec, &topology)?;
    let cloud = nova_core::baselines::place_top_c(&topology, &plan);
    let cloud_lat = pair_latency(&cloud, &plan, &LatencyView::True(&topology.latency))?;
    let worst = cloud_lat.per_pair.iter().fold(0.0f64, |a, &b| a.max(b));
    println!(
        "for comparison, the highest-capacity node ({}) alone reaches {:.0} ms worst-case",
        demo::node_name(cloud.groups[0].node),
        worst
    );
    Ok(())
}
