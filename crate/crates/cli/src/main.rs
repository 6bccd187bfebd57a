use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mimic::dataset::{load_csv, CsvSchema, GroupedDataset, SubgroupTable};
use mimic::experiment::{
    cmd_ablate, cmd_generate, cmd_run, cmd_sweep, prepare_data, run_single, write_json, write_metrics, DataSource, ExperimentConfig,
    Format, PreparedData, RunRecord,
};
use mimic::metrics::evaluate_model;
use mimic::model::Model;
use mimic::samplers::{build_partial_views, oversample, undersample, upweight, LabelView, Method, ViewSet};
use mimic::stats::{check_mimicking, proposition1_rounding_bound, verify_proposition1, IndependenceReport};
use mimic::train::{HeadSampler, TrainMethod};
use mimic::{Error, Result};

#[derive(Parser)]
#[command(name = "mimic", version, about = "Bias Mimicking and resampling baselines on grouped data")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seeds (and the data seed for `generate`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Vanilla,
    Us,
    Os,
    Uw,
    Bm,
}

impl From<MethodArg> for TrainMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Vanilla => TrainMethod::Vanilla,
            MethodArg::Us => TrainMethod::Us,
            MethodArg::Os => TrainMethod::Os,
            MethodArg::Uw => TrainMethod::Uw,
            MethodArg::Bm => TrainMethod::Bm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadSamplerArg {
    Vanilla,
    Us,
    Uw,
    Os,
}

impl From<HeadSamplerArg> for HeadSampler {
    fn from(h: HeadSamplerArg) -> Self {
        match h {
            HeadSamplerArg::Vanilla => HeadSampler::Vanilla,
            HeadSamplerArg::Us => HeadSampler::Us,
            HeadSamplerArg::Uw => HeadSampler::Uw,
            HeadSamplerArg::Os => HeadSampler::Os,
        }
    }
}

/// Training data for commands that accept either `--data` or `--config`.
#[derive(Args)]
struct DataArgs {
    /// Grouped CSV (`y`, `b` and `f<k>` columns) instead of the config's data.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train/test CSVs and a manifest.
    Generate,
    /// Resample the training data and write the plan or label views.
    Resample {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Mimicking percentage for `--method bm`.
        #[arg(long, default_value_t = 100.0)]
        percent: f64,
    },
    /// Check the mimicking condition and target/group independence of label views.
    Verify {
        #[command(flatten)]
        data: DataArgs,
        /// Label views written by `resample --method bm --format json`.
        #[arg(long)]
        views: Option<PathBuf>,
    },
    /// Train one method and evaluate it.
    Train {
        #[arg(long, value_enum, default_value_t = MethodArg::Bm)]
        method: MethodArg,
        #[arg(long, value_enum)]
        head_sampler: Option<HeadSamplerArg>,
    },
    /// Evaluate a saved model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Test CSV; defaults to the config's test set.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Training CSV that defines the minority subgroups; defaults to the
        /// config's training set.
        #[arg(long)]
        train: Option<PathBuf>,
    },
    /// Train and evaluate every configured method and seed.
    Run,
    /// Partial-mimicking sweep.
    Sweep,
    /// Train on each label view alone and on both (binary tasks).
    Ablate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = g.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn out_dir(g: &Global, cfg: Option<&ExperimentConfig>) -> PathBuf {
    g.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn training_data(g: &Global, data: &DataArgs) -> Result<GroupedDataset> {
    match &data.data {
        Some(path) => load_csv(path, &CsvSchema::default()),
        None => Ok(prepare_data(&load_config(g)?)?.train),
    }
}

fn seed_or_default(g: &Global) -> u64 {
    g.seed.unwrap_or(0)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dispatch(cli: &Cli) -> Result<u8> {
    let g = &cli.global;
    let format = Format::from(g.format);
    match &cli.command {
        Command::Generate => {
            let mut cfg = load_config(g)?;
            if let (Some(seed), DataSource::Synthetic(spec)) = (g.seed, &mut cfg.data) {
                spec.seed = seed;
            }
            let out = out_dir(g, Some(&cfg));
            let manifest = cmd_generate(&cfg, &out)?;
            println!("wrote {} and {}", out.join("train.csv").display(), out.join("test.csv").display());
            print_table("training subgroups", &manifest.train_table);
            Ok(0)
        }
        Command::Resample { data, method, percent } => resample(g, data, *method, *percent, format),
        Command::Verify { data, views } => verify(g, data, views.as_deref(), format),
        Command::Train { method, head_sampler } => {
            let cfg = load_config(g)?;
            let seed = cfg.seeds[0];
            let mut tc = cfg.train_config((*method).into(), seed);
            if let Some(h) = head_sampler {
                tc.head_sampler = (*h).into();
            }
            let out = out_dir(g, Some(&cfg));
            create_dir(&out)?;
            let data = prepare_data(&cfg)?;
            let run = run_single(&data, &tc)?;
            run.model.save(out.join("model.json"))?;
            write_json(&out.join("runlog.json"), &run.log)?;
            let record = RunRecord {
                method: tc.method,
                seed,
                status: "ok".into(),
                exit_code: 0,
                report: Some(run.report.clone()),
                eq1: run.eq1,
            };
            let path = out.join(format!("metrics.{}", format.extension()));
            write_metrics(&path, format, &[record], &data.train_table, &cfg.hash())?;
            println!(
                "{} seed {seed}: UA {:.4}  BC {:.4}  BA {:.4}",
                tc.method.as_str(),
                run.report.unbiased_accuracy,
                run.report.bias_conflict,
                run.report.bias_amplification
            );
            Ok(0)
        }
        Command::Evaluate { model, test, train } => {
            let m = Model::load(model)?;
            let (test, table) = match (test, train) {
                (Some(test), Some(train)) => {
                    let schema = CsvSchema {
                        num_classes: Some(m.config.num_classes),
                        ..CsvSchema::default()
                    };
                    let train = load_csv(train, &schema)?;
                    let test = load_csv(test, &CsvSchema { num_groups: Some(train.num_groups()), ..schema })?;
                    (test, train.subgroup_table())
                }
                (None, None) => {
                    let PreparedData { test, train_table, .. } = prepare_data(&load_config(g)?)?;
                    (test, train_table)
                }
                _ => return Err(Error::Config("give both --test and --train, or neither".into())),
            };
            let report = evaluate_model(&m, &test, &table)?;
            let json = serde_json::to_string_pretty(&report)? + "\n";
            match &g.out {
                Some(out) => {
                    create_dir(out)?;
                    write_text(&out.join("evaluation.json"), &json)?;
                }
                None => print!("{json}"),
            }
            Ok(0)
        }
        Command::Run => {
            let cfg = load_config(g)?;
            let out = out_dir(g, Some(&cfg));
            let records = cmd_run(&cfg, &out, format)?;
            let mut code = 0;
            for r in &records {
                match &r.report {
                    Some(m) => println!(
                        "{:<8} seed {:<4} UA {:.4}  BC {:.4}  BA {:.4}",
                        r.method.as_str(),
                        r.seed,
                        m.unbiased_accuracy,
                        m.bias_conflict,
                        m.bias_amplification
                    ),
                    None => {
                        println!("{:<8} seed {:<4} {}", r.method.as_str(), r.seed, r.status);
                        code = code.max(r.exit_code);
                    }
                }
            }
            println!("wrote {}", out.join(format!("metrics.{}", format.extension())).display());
            Ok(code as u8)
        }
        Command::Sweep => {
            let cfg = load_config(g)?;
            let out = out_dir(g, Some(&cfg));
            let rows = cmd_sweep(&cfg, &out, format)?;
            for r in mimic::experiment::sweep_means(&rows) {
                println!("x {:>5}  UA {:.4}  BC {:.4}", r.percent, r.unbiased_accuracy, r.bias_conflict);
            }
            Ok(0)
        }
        Command::Ablate => {
            let cfg = load_config(g)?;
            let out = out_dir(g, Some(&cfg));
            let rows = cmd_ablate(&cfg, &out, format)?;
            for r in mimic::experiment::ablation_means(&rows) {
                println!("{:<6} UA1 {:.4}  UA2 {:.4}  UA {:.4}", r.variant, r.ua1, r.ua2, r.ua);
            }
            Ok(0)
        }
    }
}

fn print_table(title: &str, t: &SubgroupTable) {
    println!("{title}:");
    for y in 0..t.num_classes() {
        let cells: Vec<String> = t.row(y).iter().map(|c| format!("{c:>8}")).collect();
        println!("  y={y:<3}{}", cells.join(""));
    }
}

fn resample(g: &Global, data: &DataArgs, method: MethodArg, percent: f64, format: Format) -> Result<u8> {
    let d = training_data(g, data)?;
    let seed = seed_or_default(g);
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    create_dir(&out)?;
    let name = match method {
        MethodArg::Vanilla => return Err(Error::Config("vanilla training does not resample".into())),
        MethodArg::Us => "us",
        MethodArg::Os => "os",
        MethodArg::Uw => "uw",
        MethodArg::Bm => "bm",
    };
    let path = out.join(format!("resample-{name}.{}", format.extension()));
    if let MethodArg::Bm = method {
        let views = build_partial_views(&d, percent, seed)?;
        for v in &views {
            print_table(&format!("view for class {} ({} samples)", v.positive_class, v.len()), &v.kept);
            for w in &v.warnings {
                eprintln!("warning: {w}");
            }
        }
        let set = ViewSet {
            method: Method::Mimic,
            seed,
            percent,
            views,
        };
        match format {
            Format::Json => write_json(&path, &set)?,
            Format::Csv => {
                let mut text = String::from("view,id,label\n");
                for v in &set.views {
                    for &id in &v.positive_ids {
                        text += &format!("{},{id},1\n", v.positive_class);
                    }
                    for &id in &v.negative_ids {
                        text += &format!("{},{id},0\n", v.positive_class);
                    }
                }
                write_text(&path, &text)?;
            }
        }
    } else {
        let plan = match method {
            MethodArg::Us => undersample(&d, seed)?,
            MethodArg::Os => oversample(&d, seed)?,
            _ => upweight(&d)?,
        };
        print_table(&format!("{name} counts"), &plan.counts);
        match format {
            Format::Json => write_json(&path, &plan)?,
            Format::Csv => {
                let mut text = String::from("id,weight\n");
                for &id in &plan.ids {
                    let w = plan.weights.as_ref().and_then(|w| w.get(id)).unwrap_or(1.0);
                    text += &format!("{id},{w}\n");
                }
                write_text(&path, &text)?;
            }
        }
    }
    println!("wrote {}", path.display());
    Ok(0)
}

fn verify(g: &Global, data: &DataArgs, views: Option<&Path>, format: Format) -> Result<u8> {
    let views: Vec<LabelView> = match views {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<ViewSet>(&text)?.views
        }
        None => build_partial_views(&training_data(g, data)?, 100.0, seed_or_default(g))?,
    };
    let mut reports: Vec<(IndependenceReport, IndependenceReport, f64)> = Vec::new();
    for v in &views {
        let min = (0..v.kept.num_classes()).map(|y| v.kept.class_total(y)).min().unwrap_or(0);
        let tol = 1.0 / min.max(1) as f64;
        let eq1 = check_mimicking(&v.kept, v.positive_class, tol)?;
        let bound = proposition1_rounding_bound(&v.kept);
        let prop1 = verify_proposition1(&v.kept, bound)?;
        reports.push((eq1, prop1, bound));
    }
    let all_pass = reports.iter().all(|(e, p, _)| e.pass && p.pass && p.bound_holds);
    if format == Format::Json {
        let json: Vec<_> = reports
            .iter()
            .map(|(e, p, _)| serde_json::json!({ "mimicking": e, "independence": p }))
            .collect();
        println!("{}", serde_json::to_string_pretty(&json)?);
    } else {
        println!(
            "{:<6} {:>10} {:>14} {:>12} {:>14} {:>12} {:>6}",
            "view", "samples", "eq1_residual", "eq1_bound", "dependence", "dep_bound", "pass"
        );
        for ((e, p, bound), v) in reports.iter().zip(&views) {
            println!(
                "{:<6} {:>10} {:>14.3e} {:>12.3e} {:>14.3e} {:>12.3e} {:>6}",
                v.positive_class,
                v.len(),
                e.max_residual_eq1,
                e.tolerance,
                p.max_residual_prop1,
                bound,
                if e.pass && p.pass && p.bound_holds { "yes" } else { "no" }
            );
        }
    }
    if let Some(out) = &g.out {
        create_dir(out)?;
        let json: Vec<_> = reports
            .iter()
            .map(|(e, p, _)| serde_json::json!({ "mimicking": e, "independence": p }))
            .collect();
        write_json(&out.join("verify.json"), &json)?;
    }
    if all_pass {
        Ok(0)
    } else {
        Err(Error::Verification("at least one view failed".into()))
    }
}
