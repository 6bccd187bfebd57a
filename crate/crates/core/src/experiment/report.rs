//! Tabular outputs. Floats use Rust's shortest round-trip formatting, so equal
//! values always print identically.

use std::path::Path;

use serde::Serialize;

use super::{mean_std, write_json, Format, RunRecord};
use crate::dataset::SubgroupTable;
use crate::error::{Error, Result};
use crate::train::{AblationRow, SweepRow, TrainMethod};

/// Per-method aggregate over successful runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: TrainMethod,
    pub runs: usize,
    pub failed: usize,
    pub ua: (f64, f64),
    pub bc: (f64, f64),
    pub ba: (f64, f64),
    /// Mean accuracy per subgroup.
    pub subgroup_accuracy: Vec<Vec<f64>>,
}

pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut methods: Vec<TrainMethod> = Vec::new();
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|method| {
            let all: Vec<&RunRecord> = records.iter().filter(|r| r.method == method).collect();
            let ok: Vec<_> = all.iter().filter_map(|r| r.report.as_ref()).collect();
            let col = |f: &dyn Fn(&crate::metrics::MetricsReport) -> f64| {
                mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            let subgroup_accuracy = match ok.first() {
                Some(first) => first
                    .subgroup_accuracy
                    .iter()
                    .enumerate()
                    .map(|(y, row)| {
                        (0..row.len())
                            .map(|b| col(&|r| r.subgroup_accuracy[y][b]).0)
                            .collect()
                    })
                    .collect(),
                None => Vec::new(),
            };
            SummaryRow {
                method,
                runs: ok.len(),
                failed: all.len() - ok.len(),
                ua: col(&|r| r.unbiased_accuracy),
                bc: col(&|r| r.bias_conflict),
                ba: col(&|r| r.bias_amplification),
                subgroup_accuracy,
            }
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn num(v: f64) -> String {
    v.to_string()
}

#[derive(Serialize)]
struct MetricsJson<'a> {
    config_hash: &'a str,
    runs: &'a [RunRecord],
    summary: Vec<SummaryRow>,
}

/// Detail row per run, then one summary row per method whose metric columns
/// hold the mean and whose `*_std` columns hold the standard deviation.
pub fn write_metrics(path: &Path, format: Format, records: &[RunRecord], train: &SubgroupTable, hash: &str) -> Result<()> {
    if format == Format::Json {
        return write_json(
            path,
            &MetricsJson {
                config_hash: hash,
                runs: records,
                summary: summarize(records),
            },
        );
    }
    let (c, g) = (train.num_classes(), train.num_groups());
    let mut header: Vec<String> = ["method", "seed", "UA", "BC", "BA"].map(String::from).to_vec();
    for y in 0..c {
        for b in 0..g {
            header.push(format!("acc_y{y}_b{b}"));
        }
    }
    header.extend(
        ["UA_std", "BC_std", "BA_std", "eq1_residual", "eq1_bound", "status", "config_hash"].map(String::from),
    );
    let blank = |n: usize| vec![String::new(); n];
    let mut rows = Vec::new();
    for r in records {
        let mut row = vec![r.method.as_str().to_string(), r.seed.to_string()];
        match &r.report {
            Some(m) => {
                row.extend([m.unbiased_accuracy, m.bias_conflict, m.bias_amplification].map(num));
                row.extend(m.subgroup_accuracy.iter().flatten().map(|&v| num(v)));
            }
            None => row.extend(blank(3 + c * g)),
        }
        row.extend(blank(3));
        match r.eq1 {
            Some(e) => row.extend([num(e.max_residual), num(e.bound)]),
            None => row.extend(blank(2)),
        }
        row.push(r.status.clone());
        row.push(hash.to_string());
        rows.push(row);
    }
    for s in summarize(records) {
        let mut row = vec![s.method.as_str().to_string(), "summary".to_string()];
        row.extend([s.ua.0, s.bc.0, s.ba.0].map(num));
        if s.subgroup_accuracy.is_empty() {
            row.extend(blank(c * g));
        } else {
            row.extend(s.subgroup_accuracy.iter().flatten().map(|&v| num(v)));
        }
        row.extend([s.ua.1, s.bc.1, s.ba.1].map(num));
        row.extend(blank(2));
        row.push(if s.failed == 0 {
            format!("ok ({} runs)", s.runs)
        } else {
            format!("partial ({} of {} runs failed)", s.failed, s.runs + s.failed)
        });
        row.push(hash.to_string());
        rows.push(row);
    }
    write_rows(path, &header, &rows)
}

#[derive(Serialize)]
struct SeededRows<'a, T> {
    config_hash: &'a str,
    rows: Vec<Seeded<'a, T>>,
}

#[derive(Serialize)]
struct Seeded<'a, T> {
    seed: u64,
    #[serde(flatten)]
    row: &'a T,
}

fn seeded<'a, T>(rows: &'a [(u64, T)], hash: &'a str) -> SeededRows<'a, T> {
    SeededRows {
        config_hash: hash,
        rows: rows.iter().map(|(seed, row)| Seeded { seed: *seed, row }).collect(),
    }
}

/// `x,UA,BC` per seed and percentage, followed by the mean over seeds for
/// each percentage.
pub fn write_sweep(path: &Path, format: Format, rows: &[(u64, SweepRow)], hash: &str) -> Result<()> {
    if format == Format::Json {
        return write_json(path, &seeded(rows, hash));
    }
    let header = ["x", "UA", "BC", "seed", "config_hash"].map(String::from).to_vec();
    let mut out: Vec<Vec<String>> = rows
        .iter()
        .map(|(seed, r)| vec![num(r.percent), num(r.unbiased_accuracy), num(r.bias_conflict), seed.to_string(), hash.into()])
        .collect();
    for x in sweep_means(rows) {
        out.push(vec![num(x.percent), num(x.unbiased_accuracy), num(x.bias_conflict), "mean".into(), hash.into()]);
    }
    write_rows(path, &header, &out)
}

/// Mean UA and BC over seeds for each percentage, in first-seen order.
pub fn sweep_means(rows: &[(u64, SweepRow)]) -> Vec<SweepRow> {
    let mut xs: Vec<f64> = Vec::new();
    for (_, r) in rows {
        if !xs.contains(&r.percent) {
            xs.push(r.percent);
        }
    }
    xs.into_iter()
        .map(|x| {
            let at: Vec<&SweepRow> = rows.iter().map(|(_, r)| r).filter(|r| r.percent == x).collect();
            SweepRow {
                percent: x,
                unbiased_accuracy: mean_std(&at.iter().map(|r| r.unbiased_accuracy).collect::<Vec<_>>()).0,
                bias_conflict: mean_std(&at.iter().map(|r| r.bias_conflict).collect::<Vec<_>>()).0,
            }
        })
        .collect()
}

/// Mean UA1, UA2 and UA over seeds for each variant, in first-seen order.
pub fn ablation_means(rows: &[(u64, AblationRow)]) -> Vec<AblationRow> {
    let mut variants: Vec<&str> = Vec::new();
    for (_, r) in rows {
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    variants
        .into_iter()
        .map(|v| {
            let at: Vec<&AblationRow> = rows.iter().map(|(_, r)| r).filter(|r| r.variant == v).collect();
            let mean = |f: fn(&AblationRow) -> f64| mean_std(&at.iter().map(|r| f(r)).collect::<Vec<_>>()).0;
            AblationRow {
                variant: v.to_string(),
                ua1: mean(|r| r.ua1),
                ua2: mean(|r| r.ua2),
                ua: mean(|r| r.ua),
            }
        })
        .collect()
}

/// `variant,UA1,UA2,UA` per seed, followed by the mean over seeds.
pub fn write_ablation(path: &Path, format: Format, rows: &[(u64, AblationRow)], hash: &str) -> Result<()> {
    if format == Format::Json {
        return write_json(path, &seeded(rows, hash));
    }
    let header = ["variant", "UA1", "UA2", "UA", "seed", "config_hash"].map(String::from).to_vec();
    let mut out: Vec<Vec<String>> = rows
        .iter()
        .map(|(seed, r)| vec![r.variant.clone(), num(r.ua1), num(r.ua2), num(r.ua), seed.to_string(), hash.into()])
        .collect();
    for r in ablation_means(rows) {
        out.push(vec![r.variant, num(r.ua1), num(r.ua2), num(r.ua), "mean".into(), hash.into()]);
    }
    write_rows(path, &header, &out)
}
