//! On-disk contrastive datasets: one directory per task holding a text
//! manifest, the instance copies, graph files and float32 sample files.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use milpmt_core::graph::{encode, BipartiteGraph};
use milpmt_core::lp::{solve_lp_relaxation, Pricing};
use milpmt_core::milp::io::{read_instance, write_instance};
use milpmt_core::solver::SolveBudget;
use milpmt_core::{Graph32, Instance};
use milpmt_nn::Task;
use thiserror::Error;

use crate::collect::{
    collect_backdoors_mcts, collect_configs, collect_solutions, derive_negative_solutions, BackdoorParams,
    CollectError, ConfigParams, SolutionParams,
};
use crate::{derive_seed, par_map};

pub const MANIFEST: &str = "manifest.txt";
pub const SKIP_LOG: &str = "skipped.txt";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset at {0} has no records")]
    Empty(PathBuf),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error("io error on {path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error(transparent)]
    Collect(#[from] CollectError),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DatasetError + '_ {
    move |e| DatasetError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Collector settings for one task.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskParams {
    Backdoor(BackdoorParams),
    Pas {
        solutions: SolutionParams,
        rho: f64,
        negative_budget: SolveBudget,
    },
    Config(ConfigParams),
}

impl TaskParams {
    pub fn default_for(task: Task) -> Self {
        match task {
            Task::Backdoor => TaskParams::Backdoor(BackdoorParams::default()),
            Task::Pas => TaskParams::Pas {
                solutions: SolutionParams::default(),
                rho: 0.1,
                negative_budget: SolveBudget::nodes(500),
            },
            Task::Config => TaskParams::Config(ConfigParams::default()),
        }
    }

    pub fn task(&self) -> Task {
        match self {
            TaskParams::Backdoor(_) => Task::Backdoor,
            TaskParams::Pas { .. } => Task::Pas,
            TaskParams::Config(_) => Task::Config,
        }
    }
}

/// Samples for one instance, as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub graph: Graph32,
    pub pos: Vec<Vec<f32>>,
    pub neg: Vec<Vec<f32>>,
}

/// Manifest line: `id instance graph positives negatives`, paths relative to
/// the dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub instance: String,
    pub graph: String,
    pub positives: String,
    pub negatives: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport {
    pub entries: Vec<ManifestEntry>,
    pub skipped: Vec<(String, String)>,
}

/// Root-LP graph in f32.
pub fn instance_graph(inst: &Instance) -> Result<Graph32, CollectError> {
    let lp = solve_lp_relaxation(inst, Pricing::Dantzig, None)?;
    if !lp.is_optimal() {
        return Err(CollectError::RootLp);
    }
    Ok(encode(inst, &lp)?.cast())
}

/// Runs the task's collector on one instance and returns `(pos, neg)`
/// sample vectors with negatives equal to a positive removed.
pub fn collect_samples(
    inst: &Instance,
    params: &TaskParams,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), CollectError> {
    let n = inst.num_vars();
    let (pos, mut neg): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match params {
        TaskParams::Backdoor(p) => {
            let (pos, neg) = collect_backdoors_mcts(inst, p, seed)?;
            (
                pos.iter().map(|s| s.indicator(n)).collect(),
                neg.iter().map(|s| s.indicator(n)).collect(),
            )
        }
        TaskParams::Pas {
            solutions,
            rho,
            negative_budget,
        } => {
            let pos = collect_solutions(inst, solutions, seed)?;
            let neg = derive_negative_solutions(inst, &pos, *rho, negative_budget, seed)?;
            (
                pos.iter().map(|s| s.indicator(inst)).collect(),
                neg.iter().map(|s| s.indicator(inst)).collect(),
            )
        }
        TaskParams::Config(p) => {
            let (pos, neg) = collect_configs(inst, p, seed)?;
            (
                pos.into_iter().map(|s| s.vector).collect(),
                neg.into_iter().map(|s| s.vector).collect(),
            )
        }
    };
    if pos.is_empty() {
        return Err(CollectError::NoFeasibleFound);
    }
    neg.retain(|v| !pos.contains(v));
    Ok((pos, neg))
}

pub fn write_samples(path: &Path, samples: &[Vec<f32>]) -> Result<(), DatasetError> {
    let dim = samples.first().map_or(0, Vec::len);
    let mut buf = Vec::with_capacity(8 + 4 * dim * samples.len());
    buf.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for s in samples {
        if s.len() != dim {
            return Err(DatasetError::Format("ragged sample vectors".into()));
        }
        for v in s {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_samples(path: &Path) -> Result<Vec<Vec<f32>>, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let word = |k: usize| -> Result<[u8; 4], DatasetError> {
        bytes
            .get(4 * k..4 * k + 4)
            .map(|b| b.try_into().expect("4 bytes"))
            .ok_or_else(|| DatasetError::Format(format!("{} is truncated", path.display())))
    };
    let count = u32::from_le_bytes(word(0)?) as usize;
    let dim = u32::from_le_bytes(word(1)?) as usize;
    if bytes.len() != 8 + 4 * count * dim {
        return Err(DatasetError::Format(format!("{} has the wrong length", path.display())));
    }
    let mut out = Vec::with_capacity(count);
    for s in 0..count {
        let row = (0..dim)
            .map(|d| word(2 + s * dim + d).map(f32::from_le_bytes))
            .collect::<Result<Vec<f32>, _>>()?;
        out.push(row);
    }
    Ok(out)
}

fn to_f32(v: &[Vec<f64>]) -> Vec<Vec<f32>> {
    v.iter().map(|s| s.iter().map(|&x| x as f32).collect()).collect()
}

pub fn write_manifest(dir: &Path, task: Task, entries: &[ManifestEntry]) -> Result<(), DatasetError> {
    let mut s = format!("task {}\n", task.as_str());
    for e in entries {
        s.push_str(&format!(
            "record {} {} {} {} {}\n",
            e.id, e.instance, e.graph, e.positives, e.negatives
        ));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, s).map_err(io_err(&path))
}

pub fn read_manifest(dir: &Path) -> Result<(Task, Vec<ManifestEntry>), DatasetError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut task = None;
    let mut entries = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["task", t] => task = Some(t.parse::<Task>().map_err(|e| DatasetError::Format(e.to_string()))?),
            ["record", id, inst, graph, pos, neg] => entries.push(ManifestEntry {
                id: id.to_string(),
                instance: inst.to_string(),
                graph: graph.to_string(),
                positives: pos.to_string(),
                negatives: neg.to_string(),
            }),
            _ => return Err(DatasetError::Format(format!("bad manifest line `{line}`"))),
        }
    }
    let task = task.ok_or_else(|| DatasetError::Format("manifest has no task line".into()))?;
    Ok((task, entries))
}

/// Collects samples for every instance (in parallel), writes one file set
/// per kept instance plus the manifest and a skip log. Skip-class collector
/// errors are logged; other errors abort.
pub fn build_dataset(
    params: &TaskParams,
    instances: &[(String, Instance)],
    out_dir: &Path,
    seed: u64,
) -> Result<BuildReport, DatasetError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let task = params.task();
    let results = par_map(instances, |idx, (_, inst)| {
        let s = derive_seed(seed, idx as u64);
        instance_graph(inst).and_then(|g| collect_samples(inst, params, s).map(|(p, n)| (g, p, n)))
    });
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for ((id, inst), res) in instances.iter().zip(results) {
        match res {
            Ok((graph, pos, neg)) => {
                let e = ManifestEntry {
                    id: id.clone(),
                    instance: format!("{id}.milp"),
                    graph: format!("{id}.graph"),
                    positives: format!("{id}.pos"),
                    negatives: format!("{id}.neg"),
                };
                let ipath = out_dir.join(&e.instance);
                write_instance(inst, &ipath).map_err(|err| DatasetError::Io {
                    path: ipath.clone(),
                    msg: err.to_string(),
                })?;
                let gpath = out_dir.join(&e.graph);
                fs::write(&gpath, graph.to_bytes()).map_err(io_err(&gpath))?;
                write_samples(&out_dir.join(&e.positives), &to_f32(&pos))?;
                write_samples(&out_dir.join(&e.negatives), &to_f32(&neg))?;
                entries.push(e);
            }
            Err(err) if err.is_skip() => {
                log::warn!("skipping {id} for {}: {err}", task.as_str());
                skipped.push((id.clone(), err.to_string()));
            }
            Err(err) => return Err(err.into()),
        }
    }
    write_manifest(out_dir, task, &entries)?;
    let log_path = out_dir.join(SKIP_LOG);
    let mut f = fs::File::create(&log_path).map_err(io_err(&log_path))?;
    for (id, why) in &skipped {
        writeln!(f, "{id}\t{why}").map_err(io_err(&log_path))?;
    }
    Ok(BuildReport { entries, skipped })
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let (task, entries) = read_manifest(dir)?;
        let mut records = Vec::with_capacity(entries.len());
        for e in entries {
            let gpath = dir.join(&e.graph);
            let mut bytes = Vec::new();
            fs::File::open(&gpath)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(io_err(&gpath))?;
            let graph = BipartiteGraph::<f32>::read_from(bytes.as_slice())
                .map_err(|err| DatasetError::Format(format!("{}: {err}", gpath.display())))?;
            records.push(Record {
                id: e.id,
                graph,
                pos: read_samples(&dir.join(&e.positives))?,
                neg: read_samples(&dir.join(&e.negatives))?,
            });
        }
        Ok(Dataset { task, records })
    }

    /// Instances referenced by a dataset directory, in manifest order.
    pub fn instances(dir: &Path) -> Result<Vec<(String, Instance)>, DatasetError> {
        let (_, entries) = read_manifest(dir)?;
        entries
            .into_iter()
            .map(|e| {
                let p = dir.join(&e.instance);
                read_instance(&p)
                    .map(|inst| (e.id, inst))
                    .map_err(|err| DatasetError::Io {
                        path: p,
                        msg: err.to_string(),
                    })
            })
            .collect()
    }
}
