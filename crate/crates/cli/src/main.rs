use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use milpmt_core::generate::{preset_size, write_suite, Family, GenSpec, Preset, PresetTask, SizeParams};
use milpmt_core::milp::io::read_instance;
use milpmt_core::solver::{default_config, solve, SolveBudget, SolverConfig};
use milpmt_core::Instance;
use milpmt_nn::{Checkpoint, Task};
use milpmt_pipeline::collect::BackdoorParams;
use milpmt_pipeline::dataset::{build_dataset, Dataset, TaskParams};
use milpmt_pipeline::eval::{eval_backdoor, eval_config, eval_pas, predict, Amount, EvalTable, PasSizes};
use milpmt_pipeline::report::{read_records_csv, records_csv, summary_csv, write_report, RECORDS_CSV, SUMMARY_CSV};
use milpmt_pipeline::runspec::{load_instances, run, RunSpec};
use milpmt_pipeline::train::{metrics_csv, phase1_train, phase2_finetune, single_task_train, TrainConfig};

#[derive(Parser)]
#[command(name = "milpmt", version, about = "Multi-task representation learning for MILP solving")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a seeded instance suite.
    Generate(GenerateArgs),
    /// Solve one instance with the branch-and-bound solver.
    Solve(SolveArgs),
    /// Build a contrastive dataset for one task.
    Collect(CollectArgs),
    /// Phase-1 multi-task training, or a single-task baseline.
    Train(TrainArgs),
    /// Phase-2 head fine-tuning on a frozen trunk.
    Finetune(FinetuneArgs),
    /// Print model scores for one instance.
    Predict(PredictArgs),
    /// Compare a model against the solver baselines on a suite.
    Evaluate(EvaluateArgs),
    /// Merge evaluation results into one summary.
    Report(ReportArgs),
    /// Execute a run spec end to end.
    Run {
        spec: PathBuf,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    family: Family,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// desk, S or L
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Task whose S/L sizes to use.
    #[arg(long, default_value = "backdoor")]
    task: Task,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    avg_degree: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    bids: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BudgetArgs {
    /// Node limit.
    #[arg(long)]
    nodes: Option<u64>,
    /// Work limit in LP pivots.
    #[arg(long)]
    work: Option<u64>,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    seconds: Option<f64>,
}

impl BudgetArgs {
    fn budget(&self) -> SolveBudget {
        let b = SolveBudget {
            node_limit: self.nodes,
            work_limit: self.work,
            wall_limit: self.seconds,
        };
        if b == SolveBudget::default() {
            SolveBudget::nodes(100_000)
        } else {
            b
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    instance: PathBuf,
    /// Configuration file (`slotK = v` lines or 19 numbers).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also print the best assignment.
    #[arg(long)]
    show_solution: bool,
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long)]
    task: Task,
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Backdoor size.
    #[arg(long)]
    k: Option<usize>,
    /// MCTS simulations per instance.
    #[arg(long)]
    sims: Option<usize>,
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    random_heads: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write per-epoch losses here.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

impl TrainFlags {
    fn config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            lr: self.lr.unwrap_or(d.lr),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            patience: self.patience.unwrap_or(d.patience),
            n_random_heads: self.random_heads.unwrap_or(d.n_random_heads),
            seed: self.seed,
            ..d
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directories, one per task.
    #[arg(long = "data", required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Train trunk and head jointly on a single dataset.
    #[arg(long)]
    single_task: bool,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    task: Task,
    #[arg(long)]
    instance: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    task: Task,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    instances: PathBuf,
    /// Work budget in LP pivots.
    #[arg(long, default_value_t = 5000)]
    budget: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "model")]
    approach: String,
    /// Suite name used in the tables; defaults to the directory name.
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Fractions of the binaries fixed to 0 / to 1 and allowed to flip.
    #[arg(long, default_value_t = 0.1)]
    k0: f64,
    #[arg(long, default_value_t = 0.1)]
    k1: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 5)]
    search_rounds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Directories holding a records.csv each.
    #[arg(long = "results", required = true)]
    results: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn instances_in(dir: &Path) -> Result<Vec<(String, Instance)>> {
    let v = load_instances(dir).map_err(anyhow::Error::msg)?;
    if v.is_empty() {
        bail!("no .milp files in {}", dir.display());
    }
    Ok(v)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let preset: Preset = a.preset.parse()?;
    let task = match a.task {
        Task::Backdoor => PresetTask::Backdoor,
        Task::Pas => PresetTask::Pas,
        Task::Config => PresetTask::Config,
    };
    let size = match preset_size(a.family, preset, task) {
        SizeParams::Auction { items, bids } => SizeParams::Auction {
            items: a.items.unwrap_or(items),
            bids: a.bids.unwrap_or(bids),
        },
        SizeParams::Graph { avg_degree, nodes } => SizeParams::Graph {
            avg_degree: a.avg_degree.unwrap_or(avg_degree),
            nodes: a.nodes.unwrap_or(nodes),
        },
    };
    let spec = GenSpec {
        family: a.family,
        size,
        seed: a.seed,
    };
    let paths = write_suite(&spec, a.count, &a.out)?;
    println!("wrote {} instances to {}", paths.len(), a.out.display());
    Ok(())
}

fn solve_cmd(a: SolveArgs) -> Result<()> {
    let inst: Instance = read_instance(&a.instance)?;
    let cfg = match &a.config {
        Some(p) => SolverConfig::from_text(&fs::read_to_string(p)?)?,
        None => default_config(),
    };
    let r = solve(&inst, &cfg, None, &a.budget.budget(), a.seed)?;
    println!("status {}", r.status.as_str());
    match r.best_obj {
        Some(v) => println!("objective {v}"),
        None => println!("objective none"),
    }
    println!("dual_bound {}", r.dual_bound);
    println!("nodes {}", r.trace.nodes_processed);
    println!("pivots {}", r.trace.total_work);
    println!("seconds {:.3}", r.wall_seconds);
    if a.show_solution {
        if let Some(x) = &r.best_assignment {
            for (j, v) in x.iter().enumerate() {
                println!("x{j} {v}");
            }
        }
    }
    Ok(())
}

fn collect(a: CollectArgs) -> Result<()> {
    let insts = instances_in(&a.instances)?;
    let mut params = TaskParams::default_for(a.task);
    if let TaskParams::Backdoor(p) = &mut params {
        *p = BackdoorParams {
            k: a.k.unwrap_or(p.k),
            sim_budget: a.sims.unwrap_or(p.sim_budget),
            ..p.clone()
        };
    }
    let rep = build_dataset(&params, &insts, &a.out, a.seed)?;
    println!(
        "{} records, {} skipped, written to {}",
        rep.entries.len(),
        rep.skipped.len(),
        a.out.display()
    );
    Ok(())
}

fn write_metrics(path: &Option<PathBuf>, rows: &[milpmt_pipeline::train::MetricRow]) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, metrics_csv(rows)).with_context(|| p.display().to_string())?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.flags.config();
    let mut data = Vec::new();
    for d in &a.data {
        let ds = Dataset::load(d)?;
        data.push((ds.task, ds.records));
    }
    let out = if a.single_task {
        if data.len() != 1 {
            bail!("--single-task takes exactly one --data directory");
        }
        single_task_train(&data[0].1, data[0].0, &cfg)?
    } else {
        phase1_train(&data, &cfg)?
    };
    out.checkpoint.save(&a.out)?;
    write_metrics(&a.flags.metrics, &out.metrics)?;
    println!(
        "best epoch {} validation loss {:.6}, saved {}",
        out.best_epoch,
        out.best_val_loss,
        a.out.display()
    );
    Ok(())
}

fn finetune(a: FinetuneArgs) -> Result<()> {
    let ckpt = Checkpoint::<f32>::load(&a.model)?;
    let ds = Dataset::load(&a.data)?;
    let out = phase2_finetune(&ckpt, &ds.records, ds.task, &a.flags.config())?;
    out.checkpoint.save(&a.out)?;
    write_metrics(&a.flags.metrics, &out.metrics)?;
    println!(
        "{} head: best epoch {} validation loss {:.6}, saved {}",
        ds.task,
        out.best_epoch,
        out.best_val_loss,
        a.out.display()
    );
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::<f32>::load(&a.model)?;
    let inst: Instance = read_instance(&a.instance)?;
    let scores = predict(&ckpt, a.task, &inst)?;
    if a.task == Task::Config {
        print!("{}", SolverConfig::decode(&scores)?.to_text());
    } else {
        for (j, s) in scores.iter().enumerate() {
            println!("{j} {s:.6}");
        }
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let ckpt = Checkpoint::<f32>::load(&a.model)?;
    let insts = instances_in(&a.instances)?;
    let budget = SolveBudget::work(a.budget);
    let records = match a.task {
        Task::Backdoor => eval_backdoor(&ckpt, &a.approach, &insts, a.k, &budget, &default_config(), a.seed)?,
        Task::Pas => eval_pas(
            &ckpt,
            &a.approach,
            &insts,
            PasSizes {
                k0: Amount::Fraction(a.k0),
                k1: Amount::Fraction(a.k1),
                delta: Amount::Fraction(a.delta),
            },
            &budget,
            a.seed,
        )?,
        Task::Config => eval_config(&ckpt, &a.approach, &insts, &budget, a.search_rounds, a.seed)?,
    };
    let benchmark = a.benchmark.clone().unwrap_or_else(|| {
        a.instances
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "suite".into())
    });
    let table = EvalTable {
        benchmark,
        task: a.task,
        records,
    };
    write_report(&a.out, std::slice::from_ref(&table))?;
    print!("{}", summary_csv(&[table]));
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut tables = Vec::new();
    for d in &a.results {
        let p = d.join(RECORDS_CSV);
        let text = fs::read_to_string(&p).with_context(|| p.display().to_string())?;
        tables.extend(read_records_csv(&text).map_err(anyhow::Error::msg)?);
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join(RECORDS_CSV), records_csv(&tables))?;
    let summary = summary_csv(&tables);
    fs::write(a.out.join(SUMMARY_CSV), &summary)?;
    print!("{summary}");
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Generate(a) => generate(a),
        Cmd::Solve(a) => solve_cmd(a),
        Cmd::Collect(a) => collect(a),
        Cmd::Train(a) => train(a),
        Cmd::Finetune(a) => finetune(a),
        Cmd::Predict(a) => predict_cmd(a),
        Cmd::Evaluate(a) => evaluate(a),
        Cmd::Report(a) => report(a),
        Cmd::Run { spec } => {
            let spec = RunSpec::from_file(&spec)?;
            for (stage, outcome) in run(&spec)? {
                println!("{stage}: {outcome:?}");
            }
            println!("summary at {}", spec.out.join("report").join(SUMMARY_CSV).display());
            Ok(())
        }
    }
}
