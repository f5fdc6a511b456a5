//! Flat `key = value` run specs and the staged pipeline they drive.
//!
//! Grammar: one `key = value` pair per line, `#` starts a comment, blank
//! lines are ignored, list values are comma separated. Unknown keys and
//! repeated keys are errors. Every stage writes `manifests/<stage>.txt`
//! holding the seed and SHA-256 digests of its inputs and outputs; a rerun
//! skips a stage whose manifest says `ok` and whose digests still match.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use milpmt_core::generate::{preset_size, write_suite, Family, GenSpec, Preset, PresetTask, SizeParams};
use milpmt_core::milp::io::read_instance;
use milpmt_core::solver::{default_config, SolveBudget};
use milpmt_core::Instance;
use milpmt_nn::{Checkpoint, Task};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::collect::{BackdoorParams, ConfigParams, SolutionParams};
use crate::dataset::{build_dataset, Dataset, Record, TaskParams};
use crate::eval::{eval_backdoor, eval_config, eval_pas, Amount, EvalTable, PasSizes};
use crate::report::{read_records_csv, records_csv, summary_csv, write_report, RECORDS_CSV, TIMING_CSV};
use crate::train::{metrics_csv, phase1_train, phase2_finetune, TrainConfig};
use crate::derive_seed;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("run spec line {line}: {msg}")]
    SpecParse { line: usize, msg: String },
    #[error("stage `{stage}` failed: {msg} (see {})", manifest.display())]
    StageFailure { stage: Stage, manifest: PathBuf, msg: String },
}

fn parse_err(line: usize, msg: impl Into<String>) -> RunError {
    RunError::SpecParse { line, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Generate,
    Collect,
    Train,
    Finetune,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Generate,
        Stage::Collect,
        Stage::Train,
        Stage::Finetune,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Collect => "collect",
            Stage::Train => "train",
            Stage::Finetune => "finetune",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub seed: u64,
    pub out: PathBuf,
    pub preset: String,
    pub families: Vec<Family>,
    pub train_count: usize,
    pub test_count: usize,
    pub nodes: Option<usize>,
    pub avg_degree: Option<usize>,
    pub items: Option<usize>,
    pub bids: Option<usize>,
    pub stages: Vec<Stage>,
    pub pretrain_tasks: Vec<Task>,
    pub finetune_tasks: Vec<Task>,
    pub eval_tasks: Vec<Task>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub n_random_heads: usize,
    pub backdoor_k: usize,
    pub backdoor_sims: usize,
    pub backdoor_nodes: u64,
    pub pas_pool: usize,
    pub pas_nodes: u64,
    pub pas_rho: f64,
    pub config_samples: usize,
    pub config_work: u64,
    pub eval_work: u64,
    pub pas_k0: f64,
    pub pas_k1: f64,
    pub pas_delta: f64,
    pub search_rounds: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            seed: 0,
            out: PathBuf::from("run"),
            preset: "desk".into(),
            families: Family::ALL.to_vec(),
            train_count: 20,
            test_count: 10,
            nodes: None,
            avg_degree: None,
            items: None,
            bids: None,
            stages: Stage::ALL.to_vec(),
            pretrain_tasks: vec![Task::Backdoor, Task::Pas],
            finetune_tasks: Task::ALL.to_vec(),
            eval_tasks: Task::ALL.to_vec(),
            epochs: 30,
            lr: 1e-3,
            batch_size: 16,
            patience: 20,
            n_random_heads: 3,
            backdoor_k: 5,
            backdoor_sims: 30,
            backdoor_nodes: 1000,
            pas_pool: 10,
            pas_nodes: 1000,
            pas_rho: 0.1,
            config_samples: 20,
            config_work: 3000,
            eval_work: 5000,
            pas_k0: 0.1,
            pas_k1: 0.1,
            pas_delta: 0.05,
            search_rounds: 5,
        }
    }
}

fn list<T>(v: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err("empty list".into());
    }
    Ok(items)
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
}

impl RunSpec {
    pub fn parse(text: &str) -> Result<Self, RunError> {
        let mut spec = RunSpec::default();
        let mut seen = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(line_no, format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_string(), line_no) {
                return Err(parse_err(line_no, format!("`{key}` already set on line {prev}")));
            }
            spec.set(key, value).map_err(|m| parse_err(line_no, format!("{key}: {m}")))?;
        }
        spec.check().map_err(|m| parse_err(0, m))?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| parse_err(0, format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let task = |s: &str| s.parse::<Task>().map_err(|e| e.to_string());
        match key {
            "seed" => self.seed = num(v)?,
            "out" => self.out = PathBuf::from(v),
            "preset" => {
                v.parse::<Preset>().map_err(|e| e.to_string())?;
                self.preset = v.to_string();
            }
            "families" => self.families = list(v, |s| s.parse::<Family>().map_err(|e| e.to_string()))?,
            "train_count" => self.train_count = num(v)?,
            "test_count" => self.test_count = num(v)?,
            "nodes" => self.nodes = Some(num(v)?),
            "avg_degree" => self.avg_degree = Some(num(v)?),
            "items" => self.items = Some(num(v)?),
            "bids" => self.bids = Some(num(v)?),
            "stages" => self.stages = list(v, |s| s.parse::<Stage>())?,
            "pretrain_tasks" => self.pretrain_tasks = list(v, task)?,
            "finetune_tasks" => self.finetune_tasks = list(v, task)?,
            "eval_tasks" => self.eval_tasks = list(v, task)?,
            "epochs" => self.epochs = num(v)?,
            "lr" => self.lr = num(v)?,
            "batch_size" => self.batch_size = num(v)?,
            "patience" => self.patience = num(v)?,
            "n_random_heads" => self.n_random_heads = num(v)?,
            "backdoor_k" => self.backdoor_k = num(v)?,
            "backdoor_sims" => self.backdoor_sims = num(v)?,
            "backdoor_nodes" => self.backdoor_nodes = num(v)?,
            "pas_pool" => self.pas_pool = num(v)?,
            "pas_nodes" => self.pas_nodes = num(v)?,
            "pas_rho" => self.pas_rho = num(v)?,
            "config_samples" => self.config_samples = num(v)?,
            "config_work" => self.config_work = num(v)?,
            "eval_work" => self.eval_work = num(v)?,
            "pas_k0" => self.pas_k0 = num(v)?,
            "pas_k1" => self.pas_k1 = num(v)?,
            "pas_delta" => self.pas_delta = num(v)?,
            "search_rounds" => self.search_rounds = num(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn check(&self) -> Result<(), String> {
        if self.stages.windows(2).any(|w| w[0] >= w[1]) {
            return Err("stages must be listed once each, in pipeline order".into());
        }
        if self.config_samples < 2 {
            return Err("config_samples must be at least 2".into());
        }
        if self.train_count < 2 || self.test_count == 0 {
            return Err("train_count must be at least 2 and test_count at least 1".into());
        }
        for t in &self.eval_tasks {
            if !self.finetune_tasks.contains(t) {
                return Err(format!("eval task {t} has no fine-tuned head"));
            }
        }
        for (name, f) in [("pas_k0", self.pas_k0), ("pas_k1", self.pas_k1), ("pas_delta", self.pas_delta)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(format!("{name} must be a fraction in [0, 1]"));
            }
        }
        self.train_config().validate().map_err(|e| e.to_string())
    }

    /// Canonical `key = value` text; two specs with equal canonical text run
    /// identically.
    pub fn canonical(&self) -> String {
        let join = |v: Vec<&str>| v.join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("preset", self.preset.clone());
        kv("families", join(self.families.iter().map(|f| f.as_str()).collect()));
        kv("train_count", self.train_count.to_string());
        kv("test_count", self.test_count.to_string());
        if let Some(v) = self.nodes {
            kv("nodes", v.to_string());
        }
        if let Some(v) = self.avg_degree {
            kv("avg_degree", v.to_string());
        }
        if let Some(v) = self.items {
            kv("items", v.to_string());
        }
        if let Some(v) = self.bids {
            kv("bids", v.to_string());
        }
        kv("pretrain_tasks", join(self.pretrain_tasks.iter().map(|t| t.as_str()).collect()));
        kv("finetune_tasks", join(self.finetune_tasks.iter().map(|t| t.as_str()).collect()));
        kv("eval_tasks", join(self.eval_tasks.iter().map(|t| t.as_str()).collect()));
        kv("epochs", self.epochs.to_string());
        kv("lr", self.lr.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("patience", self.patience.to_string());
        kv("n_random_heads", self.n_random_heads.to_string());
        kv("backdoor_k", self.backdoor_k.to_string());
        kv("backdoor_sims", self.backdoor_sims.to_string());
        kv("backdoor_nodes", self.backdoor_nodes.to_string());
        kv("pas_pool", self.pas_pool.to_string());
        kv("pas_nodes", self.pas_nodes.to_string());
        kv("pas_rho", self.pas_rho.to_string());
        kv("config_samples", self.config_samples.to_string());
        kv("config_work", self.config_work.to_string());
        kv("eval_work", self.eval_work.to_string());
        kv("pas_k0", self.pas_k0.to_string());
        kv("pas_k1", self.pas_k1.to_string());
        kv("pas_delta", self.pas_delta.to_string());
        kv("search_rounds", self.search_rounds.to_string());
        s
    }

    pub fn size_for(&self, family: Family) -> SizeParams {
        let preset: Preset = self.preset.parse().unwrap_or(Preset::Desk);
        match preset_size(family, preset, PresetTask::Backdoor) {
            SizeParams::Auction { items, bids } => SizeParams::Auction {
                items: self.items.unwrap_or(items),
                bids: self.bids.unwrap_or(bids),
            },
            SizeParams::Graph { avg_degree, nodes } => SizeParams::Graph {
                avg_degree: self.avg_degree.unwrap_or(avg_degree),
                nodes: self.nodes.unwrap_or(nodes),
            },
        }
    }

    pub fn gen_spec(&self, family: Family, test: bool) -> GenSpec {
        let base = self.seed.wrapping_mul(1_000_000);
        GenSpec {
            family,
            size: self.size_for(family),
            seed: if test { base.wrapping_add(500_000) } else { base },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            patience: self.patience,
            n_random_heads: self.n_random_heads,
            seed: derive_seed(self.seed, 0x7a),
            ..Default::default()
        }
    }

    pub fn task_params(&self, task: Task) -> TaskParams {
        match task {
            Task::Backdoor => TaskParams::Backdoor(BackdoorParams {
                k: self.backdoor_k,
                sim_budget: self.backdoor_sims,
                solve_budget: SolveBudget::nodes(self.backdoor_nodes),
                keep: 5,
            }),
            Task::Pas => TaskParams::Pas {
                solutions: SolutionParams {
                    pool_cap: self.pas_pool,
                    solve_budget: SolveBudget::nodes(self.pas_nodes),
                    ..Default::default()
                },
                rho: self.pas_rho,
                negative_budget: SolveBudget::nodes(self.pas_nodes / 2),
            },
            Task::Config => TaskParams::Config(ConfigParams {
                n_samples: self.config_samples,
                k_keep: (self.config_samples / 2).clamp(1, 5),
                eval_budget: SolveBudget::work(self.config_work),
                ..Default::default()
            }),
        }
    }

    fn collect_tasks(&self) -> Vec<Task> {
        Task::ALL
            .into_iter()
            .filter(|t| self.pretrain_tasks.contains(t) || self.finetune_tasks.contains(t))
            .collect()
    }
}

/// Artifact paths under the run directory.
pub mod layout {
    use super::*;

    pub fn instances(out: &Path, family: Family, test: bool) -> PathBuf {
        out.join("instances").join(family.as_str()).join(if test { "test" } else { "train" })
    }

    pub fn data(out: &Path, family: Family, task: Task) -> PathBuf {
        out.join("data").join(family.as_str()).join(task.as_str())
    }

    pub fn models(out: &Path) -> PathBuf {
        out.join("models")
    }

    pub fn eval(out: &Path) -> PathBuf {
        out.join("eval")
    }

    pub fn report(out: &Path) -> PathBuf {
        out.join("report")
    }

    pub fn manifest(out: &Path, stage: Stage) -> PathBuf {
        out.join("manifests").join(format!("{stage}.txt"))
    }
}

/// `.milp` files of a directory sorted by name, keyed by file stem.
pub fn load_instances(dir: &Path) -> Result<Vec<(String, Instance)>, String> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "milp"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            read_instance(&p).map(|i| (id, i)).map_err(|e| format!("{}: {e}", p.display()))
        })
        .collect()
}

/// Wall-clock files are left out so digests are reproducible.
fn hashable(path: &Path) -> bool {
    path.file_name().is_none_or(|n| n != TIMING_CSV)
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(root, &p, out)?;
        } else if hashable(&p) {
            let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            out.push((rel, p));
        }
    }
    Ok(())
}

/// SHA-256 over a file, or over the sorted relative paths and contents of
/// everything below a directory.
pub fn digest_path(path: &Path) -> Result<String, String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        walk(path, path, &mut files).map_err(|e| format!("{}: {e}", path.display()))?;
        for (rel, p) in files {
            let bytes = fs::read(&p).map_err(|e| format!("{}: {e}", p.display()))?;
            h.update((rel.len() as u64).to_le_bytes());
            h.update(rel.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    } else {
        let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn digest_text(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub stage: Stage,
    pub seed: u64,
    pub status: String,
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<(String, String)>,
    pub error: Option<String>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("stage {}\nseed {}\nstatus {}\n", self.stage, self.seed, self.status);
        for (k, v) in &self.inputs {
            let _ = writeln!(s, "input {k} {v}");
        }
        for (k, v) in &self.outputs {
            let _ = writeln!(s, "output {k} {v}");
        }
        if let Some(e) = &self.error {
            let _ = writeln!(s, "error {}", e.replace('\n', " "));
        }
        s
    }

    pub fn parse(text: &str) -> Option<Self> {
        let mut m = Manifest {
            stage: Stage::Generate,
            seed: 0,
            status: String::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            error: None,
        };
        for line in text.lines() {
            let (k, rest) = line.split_once(' ')?;
            match k {
                "stage" => m.stage = rest.parse().ok()?,
                "seed" => m.seed = rest.parse().ok()?,
                "status" => m.status = rest.to_string(),
                "input" | "output" => {
                    let (name, hash) = rest.split_once(' ')?;
                    let pair = (name.to_string(), hash.to_string());
                    if k == "input" {
                        m.inputs.push(pair);
                    } else {
                        m.outputs.push(pair);
                    }
                }
                "error" => m.error = Some(rest.to_string()),
                _ => return None,
            }
        }
        Some(m)
    }
}

/// What happened to each stage of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

struct Runner<'a> {
    spec: &'a RunSpec,
    out: &'a Path,
}

type Named = Vec<(String, PathBuf)>;

impl Runner<'_> {
    fn stage_seed(&self, stage: Stage) -> u64 {
        derive_seed(self.spec.seed, 0x100 + stage as u64)
    }

    fn instance_dirs(&self, test: bool) -> Named {
        self.spec
            .families
            .iter()
            .map(|&f| {
                let tag = if test { "test" } else { "train" };
                (format!("instances/{f}/{tag}"), layout::instances(self.out, f, test))
            })
            .collect()
    }

    fn data_dirs(&self) -> Named {
        let mut v = Vec::new();
        for &f in &self.spec.families {
            for t in self.spec.collect_tasks() {
                v.push((format!("data/{f}/{t}"), layout::data(self.out, f, t)));
            }
        }
        v
    }

    fn io(&self, stage: Stage) -> (Named, Named) {
        let models = layout::models(self.out);
        match stage {
            Stage::Generate => {
                let mut o = self.instance_dirs(false);
                o.extend(self.instance_dirs(true));
                (vec![], o)
            }
            Stage::Collect => (self.instance_dirs(false), self.data_dirs()),
            Stage::Train => (
                self.data_dirs(),
                vec![("models/phase1.ckpt".into(), models.join("phase1.ckpt"))],
            ),
            Stage::Finetune => (
                {
                    let mut i = self.data_dirs();
                    i.push(("models/phase1.ckpt".into(), models.join("phase1.ckpt")));
                    i
                },
                vec![("models/final.ckpt".into(), models.join("final.ckpt"))],
            ),
            Stage::Evaluate => (
                {
                    let mut i = self.instance_dirs(true);
                    i.push(("models/final.ckpt".into(), models.join("final.ckpt")));
                    i
                },
                vec![("eval".into(), layout::eval(self.out))],
            ),
            Stage::Report => (
                vec![("eval".into(), layout::eval(self.out))],
                vec![("report".into(), layout::report(self.out))],
            ),
        }
    }

    fn digests(named: &Named) -> Result<Vec<(String, String)>, String> {
        named
            .iter()
            .map(|(k, p)| {
                if !p.exists() {
                    return Err(format!("missing input {}", p.display()));
                }
                digest_path(p).map(|d| (k.clone(), d))
            })
            .collect()
    }

    fn run_stage(&self, stage: Stage) -> Result<StageOutcome, RunError> {
        let mpath = layout::manifest(self.out, stage);
        let fail = |msg: String| {
            let m = Manifest {
                stage,
                seed: self.stage_seed(stage),
                status: "failed".into(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                error: Some(msg.clone()),
            };
            let _ = fs::create_dir_all(mpath.parent().unwrap_or(self.out));
            let _ = fs::write(&mpath, m.to_text());
            RunError::StageFailure {
                stage,
                manifest: mpath.clone(),
                msg,
            }
        };
        let (ins, outs) = self.io(stage);
        let mut inputs = vec![("spec".to_string(), digest_text(&self.spec.canonical()))];
        inputs.extend(Self::digests(&ins).map_err(fail)?);

        if let Some(prev) = fs::read_to_string(&mpath).ok().and_then(|t| Manifest::parse(&t)) {
            if prev.status == "ok" && prev.inputs == inputs && Self::digests(&outs).ok().as_ref() == Some(&prev.outputs) {
                log::info!("stage {stage}: up to date, skipping");
                return Ok(StageOutcome::Skipped);
            }
        }
        log::info!("stage {stage}: running");
        self.execute(stage).map_err(fail)?;
        let outputs = Self::digests(&outs).map_err(fail)?;
        let m = Manifest {
            stage,
            seed: self.stage_seed(stage),
            status: "ok".into(),
            inputs,
            outputs,
            error: None,
        };
        fs::create_dir_all(mpath.parent().unwrap_or(self.out)).map_err(|e| fail(e.to_string()))?;
        fs::write(&mpath, m.to_text()).map_err(|e| fail(e.to_string()))?;
        Ok(StageOutcome::Ran)
    }

    fn records_by_task(&self, tasks: &[Task]) -> Result<Vec<(Task, Vec<Record>)>, String> {
        tasks
            .iter()
            .map(|&t| {
                let mut recs = Vec::new();
                for &f in &self.spec.families {
                    let ds = Dataset::load(&layout::data(self.out, f, t)).map_err(|e| e.to_string())?;
                    recs.extend(ds.records);
                }
                Ok((t, recs))
            })
            .collect()
    }

    fn execute(&self, stage: Stage) -> Result<(), String> {
        let spec = self.spec;
        let seed = self.stage_seed(stage);
        let models = layout::models(self.out);
        match stage {
            Stage::Generate => {
                for &f in &spec.families {
                    for (test, count) in [(false, spec.train_count), (true, spec.test_count)] {
                        let dir = layout::instances(self.out, f, test);
                        let _ = fs::remove_dir_all(&dir);
                        write_suite(&spec.gen_spec(f, test), count, &dir).map_err(|e| e.to_string())?;
                    }
                }
            }
            Stage::Collect => {
                for (fi, &f) in spec.families.iter().enumerate() {
                    let insts = load_instances(&layout::instances(self.out, f, false))?;
                    for t in spec.collect_tasks() {
                        let dir = layout::data(self.out, f, t);
                        let _ = fs::remove_dir_all(&dir);
                        let s = derive_seed(seed, 16 * fi as u64 + t as u64);
                        let rep = build_dataset(&spec.task_params(t), &insts, &dir, s).map_err(|e| e.to_string())?;
                        log::info!("collect {f}/{t}: {} records, {} skipped", rep.entries.len(), rep.skipped.len());
                    }
                }
            }
            Stage::Train => {
                let data = self.records_by_task(&spec.pretrain_tasks)?;
                let out = phase1_train(&data, &spec.train_config()).map_err(|e| e.to_string())?;
                fs::create_dir_all(&models).map_err(|e| e.to_string())?;
                out.checkpoint.save(&models.join("phase1.ckpt")).map_err(|e| e.to_string())?;
                fs::write(models.join("phase1_metrics.csv"), metrics_csv(&out.metrics)).map_err(|e| e.to_string())?;
            }
            Stage::Finetune => {
                let mut ckpt = Checkpoint::<f32>::load(&models.join("phase1.ckpt")).map_err(|e| e.to_string())?;
                for (t, recs) in self.records_by_task(&spec.finetune_tasks)? {
                    let out = phase2_finetune(&ckpt, &recs, t, &spec.train_config()).map_err(|e| e.to_string())?;
                    fs::write(models.join(format!("finetune_{t}_metrics.csv")), metrics_csv(&out.metrics))
                        .map_err(|e| e.to_string())?;
                    ckpt = out.checkpoint;
                }
                ckpt.save(&models.join("final.ckpt")).map_err(|e| e.to_string())?;
            }
            Stage::Evaluate => {
                let ckpt = Checkpoint::<f32>::load(&models.join("final.ckpt")).map_err(|e| e.to_string())?;
                let root = layout::eval(self.out);
                let _ = fs::remove_dir_all(&root);
                let budget = SolveBudget::work(spec.eval_work);
                for &f in &spec.families {
                    let insts = load_instances(&layout::instances(self.out, f, true))?;
                    for &t in &spec.eval_tasks {
                        let s = derive_seed(seed, t as u64);
                        let records = match t {
                            Task::Backdoor => {
                                eval_backdoor(&ckpt, "multitask", &insts, spec.backdoor_k, &budget, &default_config(), s)
                            }
                            Task::Pas => eval_pas(
                                &ckpt,
                                "multitask",
                                &insts,
                                PasSizes {
                                    k0: Amount::Fraction(spec.pas_k0),
                                    k1: Amount::Fraction(spec.pas_k1),
                                    delta: Amount::Fraction(spec.pas_delta),
                                },
                                &budget,
                                s,
                            ),
                            Task::Config => eval_config(&ckpt, "multitask", &insts, &budget, spec.search_rounds, s),
                        }
                        .map_err(|e| e.to_string())?;
                        let table = EvalTable {
                            benchmark: f.as_str().into(),
                            task: t,
                            records,
                        };
                        write_report(&root.join(format!("{f}-{t}")), &[table]).map_err(|e| e.to_string())?;
                    }
                }
            }
            Stage::Report => {
                let root = layout::eval(self.out);
                let mut tables: Vec<EvalTable> = Vec::new();
                for &f in &spec.families {
                    for &t in &spec.eval_tasks {
                        let p = root.join(format!("{f}-{t}")).join(RECORDS_CSV);
                        let text = fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
                        tables.extend(read_records_csv(&text)?);
                    }
                }
                let dir = layout::report(self.out);
                fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
                fs::write(dir.join(RECORDS_CSV), records_csv(&tables)).map_err(|e| e.to_string())?;
                fs::write(dir.join(crate::report::SUMMARY_CSV), summary_csv(&tables)).map_err(|e| e.to_string())?;
            }
        }
        Ok(())
    }
}

/// Runs the spec's stages in order. Stops at the first failure, whose
/// manifest records the error.
pub fn run(spec: &RunSpec) -> Result<Vec<(Stage, StageOutcome)>, RunError> {
    let runner = Runner { spec, out: &spec.out };
    let mut done = Vec::new();
    for &stage in &spec.stages {
        done.push((stage, runner.run_stage(stage)?));
    }
    Ok(done)
}
