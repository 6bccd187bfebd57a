//! Config-driven pipelines: data preparation, the method × seed run matrix,
//! the partial-mimicking sweep and the view ablation.
//!
//! Every artifact written here carries the SHA-256 of the resolved config, so
//! outputs with equal hashes come from identical settings.

mod report;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    balance_subgroups, export_csv, generate_synthetic, load_csv, split, CsvSchema, GroupedDataset, PerClass, Sample,
    SubgroupTable, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_model, MetricsReport};
use crate::model::Model;
use crate::rng::{derive_seed, stream};
use crate::samplers::build_label_views;
use crate::stats::check_mimicking;
use crate::train::{
    run_dy_ablation, run_sensitivity_sweep, train, train_bias_mimicking, AblationRow, RunLog, SweepRow, TrainConfig,
    TrainMethod,
};

pub use report::{ablation_means, summarize, sweep_means, write_ablation, write_metrics, write_sweep, SummaryRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv {
        path: PathBuf,
        #[serde(flatten)]
        schema: CsvSchema,
    },
}

/// Where the evaluation set comes from. Every variant is subsampled to equal
/// subgroup sizes before use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestSource {
    /// A fresh draw from the synthetic spec with the group drawn uniformly,
    /// independent of the class.
    Unbiased { samples_per_class: usize },
    /// Stratified hold-out from the training data.
    Split { train_fraction: f64 },
    /// A separate file read with the training schema.
    Csv { path: PathBuf },
}

fn default_percents() -> Vec<f64> {
    vec![0.0, 25.0, 50.0, 75.0, 100.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub methods: Vec<TrainMethod>,
    pub seeds: Vec<u64>,
    pub data: DataSource,
    /// Defaults to an unbiased draw the size of the training set for synthetic
    /// data and an 80/20 split for CSV data.
    #[serde(default)]
    pub test: Option<TestSource>,
    pub train: TrainConfig,
    #[serde(default = "default_percents")]
    pub sweep_percents: Vec<f64>,
}

impl ExperimentConfig {
    /// Reads a TOML config. Relative paths inside it are resolved against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Csv { path, .. } = &mut cfg.data {
            resolve(path);
        }
        if let Some(TestSource::Csv { path }) = &mut cfg.test {
            resolve(path);
        }
        if let Some(out) = &mut cfg.out {
            resolve(out);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("need at least one method and one seed".into()));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        if let Some(TestSource::Unbiased { .. }) = &self.test {
            if !matches!(self.data, DataSource::Synthetic(_)) {
                return Err(Error::Config("an unbiased test draw needs a synthetic data source".into()));
            }
        }
        if let Some(x) = self.sweep_percents.iter().find(|x| !(0.0..=100.0).contains(*x)) {
            return Err(Error::Config(format!("sweep percentage {x} outside [0, 100]")));
        }
        self.train.validate()
    }

    fn test_source(&self) -> TestSource {
        self.test.clone().unwrap_or(match &self.data {
            DataSource::Synthetic(spec) => TestSource::Unbiased {
                samples_per_class: spec.samples_per_class,
            },
            DataSource::Csv { .. } => TestSource::Split { train_fraction: 0.8 },
        })
    }

    /// Hex SHA-256 of the config's canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// The training config for one cell of the run matrix.
    pub fn train_config(&self, method: TrainMethod, seed: u64) -> TrainConfig {
        TrainConfig {
            method,
            seed,
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: GroupedDataset,
    pub test: GroupedDataset,
    pub train_table: SubgroupTable,
}

fn data_seed(cfg: &ExperimentConfig) -> u64 {
    match &cfg.data {
        DataSource::Synthetic(spec) => spec.seed,
        DataSource::Csv { .. } => 0,
    }
}

fn load_source(cfg: &ExperimentConfig) -> Result<GroupedDataset> {
    match &cfg.data {
        DataSource::Synthetic(spec) => generate_synthetic(spec),
        DataSource::Csv { path, schema } => load_csv(path, schema),
    }
}

/// Draws the same spec with uniform groups and ids numbered after `offset`.
fn unbiased_draw(spec: &SyntheticSpec, samples_per_class: usize, offset: u64) -> Result<GroupedDataset> {
    let test_spec = SyntheticSpec {
        samples_per_class,
        bias_strength: PerClass::All(1.0 / spec.num_groups as f64),
        seed: derive_seed(spec.seed, stream::TEST_DATA),
        ..spec.clone()
    };
    let d = generate_synthetic(&test_spec)?;
    let samples = d
        .samples()
        .iter()
        .map(|s| Sample {
            id: s.id + offset,
            ..s.clone()
        })
        .collect();
    GroupedDataset::with_feature_dim(samples, d.num_classes(), d.num_groups(), d.feature_dim())
}

/// Builds the training set and the balanced test set, and checks that they
/// share no sample ids.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let source = load_source(cfg)?;
    let seed = data_seed(cfg);
    let (train, test) = match cfg.test_source() {
        TestSource::Split { train_fraction } => split(&source, train_fraction, true, seed)?,
        TestSource::Unbiased { samples_per_class } => {
            let DataSource::Synthetic(spec) = &cfg.data else {
                return Err(Error::Config("an unbiased test draw needs a synthetic data source".into()));
            };
            let offset = source.ids().max().map_or(0, |m| m + 1);
            let test = unbiased_draw(spec, samples_per_class, offset)?;
            (source, balance_subgroups(&test, seed)?)
        }
        TestSource::Csv { path } => {
            let schema = match &cfg.data {
                DataSource::Csv { schema, .. } => schema.clone(),
                DataSource::Synthetic(spec) => CsvSchema::with_shape(spec.num_classes, spec.num_groups),
            };
            let test = load_csv(path, &schema)?;
            (source, balance_subgroups(&test, seed)?)
        }
    };
    if let Some(id) = test.ids().find(|&id| train.position(id).is_some()) {
        return Err(Error::Data(format!("sample id {id} appears in both training and test data")));
    }
    if test.feature_dim() != train.feature_dim()
        || test.num_classes() != train.num_classes()
        || test.num_groups() != train.num_groups()
    {
        return Err(Error::Data("training and test data have different shapes".into()));
    }
    let train_table = train.subgroup_table();
    Ok(PreparedData {
        train,
        test,
        train_table,
    })
}

/// Largest mimicking residual over a method's views and the bound it was
/// checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eq1Gate {
    pub max_residual: f64,
    pub bound: f64,
}

/// Outcome of one `(method, seed)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: TrainMethod,
    pub seed: u64,
    /// `ok`, or the error that stopped the run.
    pub status: String,
    pub exit_code: i32,
    pub report: Option<MetricsReport>,
    pub eq1: Option<Eq1Gate>,
}

pub struct TrainedRun {
    pub model: Model,
    pub log: RunLog,
    pub report: MetricsReport,
    pub eq1: Option<Eq1Gate>,
}

/// Trains and evaluates one method. Bias Mimicking views must pass the
/// mimicking check (residual at most `1 / smallest retained class`) before
/// training starts.
pub fn run_single(data: &PreparedData, cfg: &TrainConfig) -> Result<TrainedRun> {
    let (model, log, eq1) = if cfg.method == TrainMethod::Bm {
        let views = build_label_views(&data.train, cfg.seed)?;
        // Reports the view closest to its own bound.
        let mut gate = Eq1Gate {
            max_residual: 0.0,
            bound: 1.0,
        };
        for v in &views {
            let min = (0..v.kept.num_classes()).map(|y| v.kept.class_total(y)).min().unwrap_or(0);
            let bound = 1.0 / min.max(1) as f64;
            let r = check_mimicking(&v.kept, v.positive_class, bound)?;
            if !r.pass {
                return Err(Error::Verification(format!(
                    "view for class {} has mimicking residual {} above {}",
                    v.positive_class, r.max_residual_eq1, bound
                )));
            }
            if r.max_residual_eq1 / bound >= gate.max_residual / gate.bound {
                gate = Eq1Gate {
                    max_residual: r.max_residual_eq1,
                    bound,
                };
            }
        }
        let (m, l) = train_bias_mimicking(&data.train, &views, cfg)?;
        (m, l, Some(gate))
    } else {
        let (m, l) = train(&data.train, cfg)?;
        (m, l, None)
    };
    let report = evaluate_model(&model, &data.test, &data.train_table)?;
    Ok(TrainedRun {
        model,
        log,
        report,
        eq1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Stamped<'a, T> {
    config_hash: &'a str,
    #[serde(flatten)]
    value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub spec: SyntheticSpec,
    pub seed: u64,
    pub train_table: SubgroupTable,
    pub test_table: SubgroupTable,
    /// Share of each training class that falls in its dominant group.
    pub dominant_fraction: Vec<f64>,
}

/// Writes `train.csv`, `test.csv` and `manifest.json` for a synthetic config.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let DataSource::Synthetic(spec) = &cfg.data else {
        return Err(Error::Config("generate needs a synthetic data source".into()));
    };
    let data = prepare_data(cfg)?;
    create_dir(out)?;
    export_csv(&data.train, out.join("train.csv"))?;
    export_csv(&data.test, out.join("test.csv"))?;
    let t = &data.train_table;
    let manifest = Manifest {
        config_hash: cfg.hash(),
        spec: spec.clone(),
        seed: spec.seed,
        train_table: t.clone(),
        test_table: data.test.subgroup_table(),
        dominant_fraction: (0..t.num_classes())
            .map(|y| t.p_group_given_class(spec.dominant(y), y).unwrap_or(f64::NAN))
            .collect(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn run_dir(out: &Path, method: TrainMethod, seed: u64) -> PathBuf {
    out.join("runs").join(format!("{}-seed{seed}", method.as_str()))
}

fn run_cell(cfg: &ExperimentConfig, data: &PreparedData, hash: &str, out: &Path, method: TrainMethod, seed: u64) -> RunRecord {
    let result = run_single(data, &cfg.train_config(method, seed)).and_then(|run| {
        let dir = run_dir(out, method, seed);
        create_dir(&dir)?;
        run.model.save(dir.join("model.json"))?;
        write_json(&dir.join("runlog.json"), &Stamped { config_hash: hash, value: &run.log })?;
        write_json(&dir.join("metrics.json"), &Stamped { config_hash: hash, value: &run.report })?;
        Ok(run)
    });
    match result {
        Ok(run) => RunRecord {
            method,
            seed,
            status: "ok".into(),
            exit_code: 0,
            report: Some(run.report),
            eq1: run.eq1,
        },
        Err(e) => RunRecord {
            method,
            seed,
            status: format!("error: {e}"),
            exit_code: e.exit_code(),
            report: None,
            eq1: None,
        },
    }
}

/// Trains every `(method, seed)` pair, writing per-run artifacts under
/// `out/runs/` and one metrics table (`metrics.csv` or `metrics.json`). A
/// failing run becomes an error row; the others still run.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, format: Format) -> Result<Vec<RunRecord>> {
    let data = prepare_data(cfg)?;
    let hash = cfg.hash();
    create_dir(out)?;
    write_json(&out.join("config.json"), &Stamped { config_hash: &hash, value: cfg })?;
    let cells: Vec<(TrainMethod, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let records: Vec<RunRecord> = cells
        .par_iter()
        .map(|&(m, s)| run_cell(cfg, &data, &hash, out, m, s))
        .collect();
    let path = out.join(format!("metrics.{}", format.extension()));
    write_metrics(&path, format, &records, &data.train_table, &hash)?;
    Ok(records)
}

/// Partial-mimicking sweep for every seed, written to `sweep.<ext>`.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, format: Format) -> Result<Vec<(u64, SweepRow)>> {
    let data = prepare_data(cfg)?;
    let rows: Vec<Vec<(u64, SweepRow)>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let tc = cfg.train_config(TrainMethod::Bm, seed);
            let rows = run_sensitivity_sweep(&data.train, &data.test, &tc, &cfg.sweep_percents)?;
            Ok(rows.into_iter().map(|r| (seed, r)).collect())
        })
        .collect::<Result<_>>()?;
    let rows: Vec<(u64, SweepRow)> = rows.into_iter().flatten().collect();
    create_dir(out)?;
    write_sweep(&out.join(format!("sweep.{}", format.extension())), format, &rows, &cfg.hash())?;
    Ok(rows)
}

/// View ablation for every seed, written to `ablation.<ext>`.
pub fn cmd_ablate(cfg: &ExperimentConfig, out: &Path, format: Format) -> Result<Vec<(u64, AblationRow)>> {
    let data = prepare_data(cfg)?;
    let rows: Vec<Vec<(u64, AblationRow)>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let tc = cfg.train_config(TrainMethod::Bm, seed);
            let rows = run_dy_ablation(&data.train, &data.test, &tc)?;
            Ok(rows.into_iter().map(|r| (seed, r)).collect())
        })
        .collect::<Result<_>>()?;
    let rows: Vec<(u64, AblationRow)> = rows.into_iter().flatten().collect();
    create_dir(out)?;
    write_ablation(&out.join(format!("ablation.{}", format.extension())), format, &rows, &cfg.hash())?;
    Ok(rows)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
