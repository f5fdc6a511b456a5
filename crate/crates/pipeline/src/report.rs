//! CSV outputs: per-run records, per-approach summaries with wins, and
//! gap-versus-work series. Wall-clock times live in a separate file so the
//! other artifacts are reproducible byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use milpmt_nn::Task;

use crate::eval::{EvalRecord, EvalTable};

pub const RECORDS_CSV: &str = "records.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const TIMING_CSV: &str = "timing.csv";
pub const SERIES_DIR: &str = "series";

const RECORDS_HEADER: &str = "benchmark,task,instance,approach,status,nodes,pivots,best_obj,pg,pi";

/// Metrics summarized per approach; all are lower-is-better.
pub const METRICS: [&str; 4] = ["pivots", "nodes", "pg", "pi"];

fn metric(r: &EvalRecord, name: &str) -> f64 {
    match name {
        "pivots" => r.pivots as f64,
        "nodes" => r.nodes as f64,
        "pg" => r.pg,
        "pi" => r.pi,
        _ => unreachable!("unknown metric {name}"),
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub benchmark: String,
    pub task: Task,
    pub approach: String,
    pub metric: &'static str,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    /// Instances where this approach is strictly best.
    pub wins: usize,
    /// Instances where the best value is shared by several approaches,
    /// this one included.
    pub ties: usize,
}

/// Approaches in first-appearance order.
fn approaches(records: &[EvalRecord]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in records {
        if !out.contains(&r.approach) {
            out.push(r.approach.clone());
        }
    }
    out
}

fn by_instance(records: &[EvalRecord]) -> BTreeMap<&str, Vec<&EvalRecord>> {
    let mut m: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        m.entry(r.instance.as_str()).or_default().push(r);
    }
    m
}

/// `(wins, ties)` per approach for one metric, plus the number of tied
/// instances. Strict wins plus tied instances equals the instance count.
pub fn tally(records: &[EvalRecord], name: &str) -> (BTreeMap<String, (usize, usize)>, usize) {
    let mut out: BTreeMap<String, (usize, usize)> = approaches(records).into_iter().map(|a| (a, (0, 0))).collect();
    let mut tied = 0;
    for rs in by_instance(records).values() {
        let best = rs.iter().map(|r| metric(r, name)).fold(f64::INFINITY, f64::min);
        let at_best: Vec<&&EvalRecord> = rs.iter().filter(|r| metric(r, name) <= best).collect();
        if at_best.len() == 1 {
            out.get_mut(&at_best[0].approach).expect("known approach").0 += 1;
        } else {
            tied += 1;
            for r in at_best {
                out.get_mut(&r.approach).expect("known approach").1 += 1;
            }
        }
    }
    (out, tied)
}

pub fn summarize(table: &EvalTable) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for name in METRICS {
        let (t, _) = tally(&table.records, name);
        for a in approaches(&table.records) {
            let xs: Vec<f64> = table
                .records
                .iter()
                .filter(|r| r.approach == a)
                .map(|r| metric(r, name))
                .collect();
            let (mean, std) = mean_std(&xs);
            let (wins, ties) = t[&a];
            rows.push(SummaryRow {
                benchmark: table.benchmark.clone(),
                task: table.task,
                approach: a,
                metric: name,
                count: xs.len(),
                mean,
                std,
                wins,
                ties,
            });
        }
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

pub fn records_csv(tables: &[EvalTable]) -> String {
    let mut s = format!("{RECORDS_HEADER}\n");
    for t in tables {
        for r in &t.records {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:.9},{:.6}\n",
                t.benchmark,
                t.task,
                r.instance,
                r.approach,
                r.status,
                r.nodes,
                r.pivots,
                opt(r.best_obj),
                r.pg,
                r.pi
            ));
        }
    }
    s
}

pub fn summary_csv(tables: &[EvalTable]) -> String {
    let mut s = String::from("benchmark,task,approach,metric,count,mean,std,wins,ties\n");
    for t in tables {
        for r in summarize(t) {
            s.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.6},{},{}\n",
                r.benchmark, r.task, r.approach, r.metric, r.count, r.mean, r.std, r.wins, r.ties
            ));
        }
    }
    s
}

fn timing_csv(tables: &[EvalTable]) -> String {
    let mut s = String::from("benchmark,instance,approach,wall_seconds\n");
    for t in tables {
        for r in &t.records {
            s.push_str(&format!("{},{},{},{:.6}\n", t.benchmark, r.instance, r.approach, r.wall_seconds));
        }
    }
    s
}

/// Writes `records.csv`, `summary.csv`, `timing.csv` and
/// `series/<instance>.csv` into `out`.
pub fn write_report(out: &Path, tables: &[EvalTable]) -> std::io::Result<()> {
    fs::create_dir_all(out.join(SERIES_DIR))?;
    fs::write(out.join(RECORDS_CSV), records_csv(tables))?;
    fs::write(out.join(SUMMARY_CSV), summary_csv(tables))?;
    fs::write(out.join(TIMING_CSV), timing_csv(tables))?;
    let mut series: BTreeMap<&str, String> = BTreeMap::new();
    for t in tables {
        for r in &t.records {
            let s = series
                .entry(r.instance.as_str())
                .or_insert_with(|| String::from("benchmark,approach,work,gap\n"));
            for (w, g) in &r.series {
                s.push_str(&format!("{},{},{},{:.9}\n", t.benchmark, r.approach, w, g));
            }
        }
    }
    for (id, body) in series {
        fs::write(out.join(SERIES_DIR).join(format!("{id}.csv")), body)?;
    }
    Ok(())
}

/// Parses a `records.csv` back into tables (series and wall times are not
/// part of it).
pub fn read_records_csv(text: &str) -> Result<Vec<EvalTable>, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(RECORDS_HEADER) {
        return Err("unexpected records.csv header".into());
    }
    let mut tables: Vec<EvalTable> = Vec::new();
    for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(format!("line {}: expected 10 fields", k + 2));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", k + 2));
        let int = |s: &str| s.parse::<u64>().map_err(|e| format!("line {}: {e}", k + 2));
        let task: Task = f[1].parse().map_err(|e| format!("line {}: {e}", k + 2))?;
        let rec = EvalRecord {
            instance: f[2].into(),
            approach: f[3].into(),
            status: f[4].into(),
            nodes: int(f[5])?,
            pivots: int(f[6])?,
            wall_seconds: 0.0,
            best_obj: if f[7].is_empty() { None } else { Some(num(f[7])?) },
            pg: num(f[8])?,
            pi: num(f[9])?,
            series: Vec::new(),
        };
        match tables.iter_mut().find(|t| t.benchmark == f[0] && t.task == task) {
            Some(t) => t.records.push(rec),
            None => tables.push(EvalTable {
                benchmark: f[0].into(),
                task,
                records: vec![rec],
            }),
        }
    }
    Ok(tables)
}
