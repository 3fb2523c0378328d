use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ckabs::ck::{ck_approx, level_overlap, oracle};
use ckabs::dynamics::{derive_seed, simulate_trace, DynamicalSystem};
use ckabs::estimation::{estimate_abstraction, EstimationConfig};
use ckabs::io::{load_system, read_json, write_json, CsvTable};
use ckabs::markov::{random_chain, LabeledMarkovChain};
use ckabs::refine::{refine, CkMetric};
use ckabs::safety::{estimate_ph_curve, grid_abstraction, ground_truth_ph_curve};
use ckabs::symbolic::Partition;
use ckabs::Label;

/// Memory-dependent Markov abstractions and the Cantor-Kantorovich metric.
#[derive(Debug, Parser)]
#[command(name = "ckabs", version)]
struct Cli {
    /// Master seed for all sampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample label traces.
    Simulate(SimulateArgs),
    /// Estimate the chain of a word set.
    Abstract(AbstractArgs),
    /// Distance between two chains.
    Ck(CkArgs),
    /// Greedy refinement from the coarse word set.
    Refine(RefineArgs),
    /// Safe initial measure, from a chain or by direct sampling.
    Verify(VerifyArgs),
    /// Uniform grid abstraction over the initial box.
    Grid(GridArgs),
    /// Data for the complexity and safety figures.
    Figures(FiguresArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    system: String,
    #[arg(long, default_value_t = 10)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    past: usize,
    #[arg(long, default_value_t = 10)]
    future: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AbstractArgs {
    #[arg(long)]
    system: String,
    /// JSON word set `{"alphabet_size": .., "words": [..]}`.
    #[arg(long)]
    partition: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CkArgs {
    #[arg(long)]
    chain1: PathBuf,
    #[arg(long)]
    chain2: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Solve the transport problem exactly at this word length instead.
    #[arg(long)]
    oracle_k: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricName {
    Ck,
}

#[derive(Debug, Args)]
struct RefineArgs {
    #[arg(long)]
    system: String,
    #[arg(long, value_enum, default_value_t = MetricName::Ck)]
    metric: MetricName,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long)]
    iters: usize,
    /// Trajectories per estimated chain.
    #[arg(long, default_value_t = 50_000)]
    samples: u64,
    /// Words seen at most this often are dropped.
    #[arg(long, default_value_t = 0)]
    zero_threshold: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    chain_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(
        long,
        conflicts_with = "ground_truth",
        required_unless_present = "ground_truth"
    )]
    chain: Option<PathBuf>,
    /// Sample the system directly instead of reading a chain.
    #[arg(long, requires = "system")]
    ground_truth: bool,
    #[arg(long)]
    system: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    #[arg(long, default_value_t = 8)]
    hmax: usize,
    #[arg(long = "unsafe", default_value_t = 0)]
    unsafe_label: Label,
    #[arg(long, default_value_t = 200_000)]
    samples: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long)]
    system: String,
    #[arg(long)]
    parts: usize,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long = "unsafe", default_value_t = 0)]
    unsafe_label: Label,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FiguresArgs {
    #[arg(long, default_value = "figures")]
    out_dir: PathBuf,
    /// Largest word length for the complexity table.
    #[arg(long, default_value_t = 15)]
    kmax: usize,
    /// Random chains per word length in the complexity table.
    #[arg(long, default_value_t = 10)]
    chains: usize,
    /// Trajectories per estimated chain for the safety table.
    #[arg(long, default_value_t = 50_000)]
    samples: u64,
    /// Trajectories for the ground truth.
    #[arg(long, default_value_t = 200_000)]
    truth_samples: u64,
    #[arg(long, default_value_t = 8)]
    hmax: usize,
    /// Skip the safety table.
    #[arg(long)]
    skip_safety: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        bail!("--threads must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .context("configuring the worker pool")?;
    let seed = cli.seed;
    let header = |what: &str| format!("ckabs {what} seed={seed} threads={}", cli.threads);
    match cli.command {
        Command::Simulate(a) => simulate(a, seed, header("simulate")),
        Command::Abstract(a) => abstract_chain(a, seed),
        Command::Ck(a) => ck(a),
        Command::Refine(a) => refine_cmd(a, seed),
        Command::Verify(a) => verify(a, seed, header("verify")),
        Command::Grid(a) => grid(a, seed),
        Command::Figures(a) => figures(a, seed, header("figures")),
    }
}

fn emit(table: &CsvTable, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => table
            .write(p)
            .with_context(|| format!("writing {}", p.display())),
        None => Ok(table.write_to(&mut std::io::stdout())?),
    }
}

fn system(arg: &str) -> Result<Box<dyn DynamicalSystem>> {
    load_system(arg).with_context(|| format!("loading system {arg:?}"))
}

fn simulate(a: SimulateArgs, seed: u64, header: String) -> Result<()> {
    let sys = system(&a.system)?;
    let mut t = CsvTable::new(&["trajectory", "start", "labels"]);
    t.comment(format!(
        "{header} system={} samples={} past={} future={}",
        a.system, a.samples, a.past, a.future
    ));
    for j in 0..a.samples {
        let trace = simulate_trace(sys.as_ref(), derive_seed(seed, &[j]), a.past, a.future)?;
        let labels: String = trace.labels.iter().map(|l| l.to_string()).collect();
        t.push(vec![j.to_string(), trace.start_offset.to_string(), labels])?;
    }
    emit(&t, a.out.as_deref())
}

fn abstract_chain(a: AbstractArgs, seed: u64) -> Result<()> {
    let sys = system(&a.system)?;
    let partition: Partition =
        read_json(&a.partition).with_context(|| format!("reading {}", a.partition.display()))?;
    let chain = estimate_abstraction(
        sys.as_ref(),
        &partition,
        &EstimationConfig::new(a.samples, seed),
    )?;
    write_json(&a.out, &chain)?;
    println!("states {}", chain.n_states());
    Ok(())
}

fn read_chain(path: &Path) -> Result<LabeledMarkovChain> {
    read_json(path).with_context(|| format!("reading chain {}", path.display()))
}

fn ck(a: CkArgs) -> Result<()> {
    let c1 = read_chain(&a.chain1)?;
    let c2 = read_chain(&a.chain2)?;
    match a.oracle_k {
        Some(k) => {
            let (value, coupling) = oracle::kantorovich_lp_oracle(&c1, &c2, k)?;
            println!("value {value}");
            println!("k_used {k}");
            println!("coupling_entries {}", coupling.entries.len());
        }
        None => {
            let r = ck_approx(&c1, &c2, a.epsilon)?;
            println!("value {}", r.value);
            println!("lower {}", r.lower);
            println!("upper {}", r.upper);
            println!("k_used {}", r.k_used);
            println!("nodes_visited {}", r.nodes_visited);
        }
    }
    Ok(())
}

fn refine_cmd(a: RefineArgs, seed: u64) -> Result<()> {
    let sys = system(&a.system)?;
    let MetricName::Ck = a.metric;
    let metric = CkMetric { epsilon: a.epsilon };
    let cfg = EstimationConfig {
        n_samples: a.samples,
        master_seed: seed,
        zero_threshold: a.zero_threshold,
    };
    let report = refine(sys.as_ref(), &metric, a.iters, &cfg)?;
    if let Some(p) = &a.out {
        write_json(p, &report.partition)?;
    }
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    if let Some(p) = &a.chain_out {
        write_json(p, &report.chain)?;
    }
    println!("states {}", report.partition.len());
    for d in &report.dropped {
        println!("dropped {} ({})", d.word, d.reason);
    }
    Ok(())
}

fn verify(a: VerifyArgs, seed: u64, header: String) -> Result<()> {
    let mut t;
    if a.ground_truth {
        let name = a.system.as_deref().unwrap_or_default();
        let sys = system(name)?;
        let curve = ground_truth_ph_curve(sys.as_ref(), a.unsafe_label, a.hmax, a.samples, seed)?;
        t = CsvTable::new(&["H", "P_H"]);
        t.comment(format!(
            "{header} ground-truth system={name} samples={} unsafe={}",
            a.samples, a.unsafe_label
        ));
        for (h, v) in curve.iter().enumerate() {
            t.push(vec![h.to_string(), v.to_string()])?;
        }
    } else {
        let path = a.chain.as_deref().expect("clap requires --chain");
        let chain = read_chain(path)?;
        let curve = estimate_ph_curve(&chain, a.beta, a.unsafe_label, a.hmax)?;
        t = CsvTable::new(&["H", "P_H_estimate"]);
        t.comment(format!(
            "{header} chain={} beta={} unsafe={}",
            path.display(),
            a.beta,
            a.unsafe_label
        ));
        for (h, v) in curve.iter().enumerate() {
            t.push(vec![h.to_string(), v.to_string()])?;
        }
    }
    emit(&t, a.out.as_deref())
}

fn grid(a: GridArgs, seed: u64) -> Result<()> {
    let sys = system(&a.system)?;
    let chain = grid_abstraction(
        sys.as_ref(),
        a.parts,
        a.unsafe_label,
        &EstimationConfig::new(a.samples, seed),
    )?;
    write_json(&a.out, &chain)?;
    println!("states {}", chain.n_states());
    Ok(())
}

fn figures(a: FiguresArgs, seed: u64, header: String) -> Result<()> {
    fs::create_dir_all(&a.out_dir)?;

    // complexity: visited nodes against the naive tree and the transport sizes
    let mut t = CsvTable::new(&[
        "k",
        "chain",
        "nodes_visited",
        "tree_nodes",
        "naive_A_k_plus_1",
        "lp_A_2k",
    ]);
    t.comment(format!(
        "{header} figure=complexity alphabet=2 states=4 chains={} kmax={}",
        a.chains, a.kmax
    ));
    for c in 0..a.chains {
        let c1 = random_chain(4, 2, 0.3, derive_seed(seed, &[c as u64, 1]));
        let c2 = random_chain(4, 2, 0.3, derive_seed(seed, &[c as u64, 2]));
        let levels = level_overlap(&c1, &c2, a.kmax)?;
        let mut visited = 0u64;
        for k in 1..=a.kmax {
            visited += levels.nodes_per_level[k - 1];
            let tree: u128 = (1..=k as u32).map(|l| 2u128.pow(l)).sum();
            t.push(vec![
                k.to_string(),
                c.to_string(),
                visited.to_string(),
                tree.to_string(),
                2u128.pow(k as u32 + 1).to_string(),
                2u128.pow(2 * k as u32).to_string(),
            ])?;
        }
    }
    let path = a.out_dir.join("complexity.csv");
    t.write(&path)?;
    println!("wrote {}", path.display());
    if a.skip_safety {
        return Ok(());
    }

    let sys = system("lorentz")?;
    let cfg = EstimationConfig::new(a.samples, seed);
    let metric = CkMetric::default();
    let chains = [
        ("refine_6", refine(sys.as_ref(), &metric, 6, &cfg)?.chain),
        ("refine_14", refine(sys.as_ref(), &metric, 14, &cfg)?.chain),
        ("grid_2", grid_abstraction(sys.as_ref(), 2, 0, &cfg)?),
        ("grid_3", grid_abstraction(sys.as_ref(), 3, 0, &cfg)?),
    ];
    let truth = ground_truth_ph_curve(
        sys.as_ref(),
        0,
        a.hmax,
        a.truth_samples,
        derive_seed(seed, &[1]),
    )?;
    let mut header_row = vec!["beta", "H", "truth"];
    header_row.extend(chains.iter().map(|(name, _)| *name));
    let mut t = CsvTable::new(&header_row);
    t.comment(format!(
        "{header} figure=safety system=lorentz samples={} truth_samples={} hmax={} states={}",
        a.samples,
        a.truth_samples,
        a.hmax,
        chains
            .iter()
            .map(|(n, c)| format!("{n}:{}", c.n_states()))
            .collect::<Vec<_>>()
            .join("/")
    ));
    for beta in [0.01, 0.05, 0.25] {
        let curves: Vec<Vec<f64>> = chains
            .iter()
            .map(|(_, c)| estimate_ph_curve(c, beta, 0, a.hmax))
            .collect::<ckabs::Result<_>>()?;
        for h in 0..=a.hmax {
            let mut row = vec![beta.to_string(), h.to_string(), truth[h].to_string()];
            row.extend(curves.iter().map(|c| c[h].to_string()));
            t.push(row)?;
        }
    }
    let path = a.out_dir.join("safety.csv");
    t.write(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
