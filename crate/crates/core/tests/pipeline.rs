use std::fs;
use std::path::Path;

use mimic::dataset::{export_csv, generate_synthetic, load_csv, CsvSchema, PerClass, SyntheticSpec};
use mimic::experiment::{cmd_generate, cmd_run, prepare_data, ExperimentConfig, Format};
use mimic::train::TrainMethod;
use mimic::Error;

fn spec(rho: f64, n: usize) -> SyntheticSpec {
    SyntheticSpec {
        num_classes: 2,
        num_groups: 2,
        samples_per_class: n,
        bias_strength: PerClass::All(rho),
        dominant_group: None,
        class_center_separation: 2.0,
        group_shift_magnitude: 3.0,
        feature_dim: 4,
        noise_sigma: 1.0,
        seed: 9,
    }
}

fn config(text: &str, dir: &Path) -> ExperimentConfig {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

const SMALL: &str = r#"
methods = ["vanilla", "bm"]
seeds = [0, 1]

[data]
kind = "synthetic"
num_classes = 2
num_groups = 2
samples_per_class = 100
bias_strength = 0.95
class_center_separation = 2.0
group_shift_magnitude = 3.0
feature_dim = 4
noise_sigma = 1.0
seed = 3

[train]
epochs = 2
batch_size = 16
learning_rate = 0.1

[train.model]
latent_dim = 2
architecture = { kind = "linear" }
"#;

#[test]
fn csv_round_trip_200_rows() {
    let d = generate_synthetic(&spec(0.8, 100)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    export_csv(&d, &path).unwrap();
    let back = load_csv(&path, &CsvSchema::with_shape(2, 2)).unwrap();
    assert_eq!(back.len(), 200);
    assert_eq!(back, d);
}

#[test]
fn shipped_config_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/blobs.toml");
    let cfg = ExperimentConfig::load(path).unwrap();
    assert_eq!(cfg.methods, TrainMethod::ALL.to_vec());
    assert_eq!(cfg.seeds.len(), 5);
    assert_eq!(cfg.sweep_percents, vec![0.0, 25.0, 50.0, 75.0, 100.0]);
}

#[test]
fn hash_tracks_config() {
    let dir = tempfile::tempdir().unwrap();
    let a = config(SMALL, dir.path());
    let b = config(SMALL, dir.path());
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
    let c = config(&SMALL.replace("epochs = 2", "epochs = 3"), dir.path());
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn bad_configs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    for text in [
        SMALL.replace("seeds = [0, 1]", "seeds = []"),
        SMALL.replace("bias_strength = 0.95", "bias_strength = 0.2"),
        SMALL.replace("learning_rate = 0.1", "learning_rate = -1.0"),
        SMALL.replace("[train]", "[trian]"),
    ] {
        fs::write(&path, text).unwrap();
        assert!(matches!(ExperimentConfig::load(&path), Err(Error::Config(_))));
    }
}

#[test]
fn test_split_is_disjoint_and_balanced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(SMALL, dir.path());
    let data = prepare_data(&cfg).unwrap();
    assert!(data.test.ids().all(|id| data.train.position(id).is_none()));
    let t = data.test.subgroup_table();
    assert_eq!(t.min_count(), t.max_count());
    assert_eq!(data.train_table, data.train.subgroup_table());

    let split = config(&format!("{SMALL}\n[test]\nkind = \"split\"\ntrain_fraction = 0.7\n"), dir.path());
    let data = prepare_data(&split).unwrap();
    assert!(data.test.ids().all(|id| data.train.position(id).is_none()));
    assert!(data.train.len() >= 130 && data.train.len() <= 150, "{}", data.train.len());
    let t = data.test.subgroup_table();
    assert_eq!(t.min_count(), t.max_count());
}

#[test]
fn manifest_reports_dominant_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&SMALL.replace("samples_per_class = 100", "samples_per_class = 2000"), dir.path());
    let manifest = cmd_generate(&cfg, &dir.path().join("gen")).unwrap();
    // 3 sigma of a Binomial(2000, 0.95) share
    let sigma = (0.95f64 * 0.05 / 2000.0).sqrt();
    for f in &manifest.dominant_fraction {
        assert!((f - 0.95).abs() <= 3.0 * sigma, "{f}");
    }
    let reloaded = load_csv(dir.path().join("gen/train.csv"), &CsvSchema::with_shape(2, 2)).unwrap();
    assert_eq!(reloaded.subgroup_table(), manifest.train_table);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("gen/manifest.json")).unwrap()).unwrap();
    assert_eq!(json["config_hash"], cfg.hash());
}

#[test]
fn failing_runs_become_error_rows() {
    // Subgroup (1, 0) is empty in training, so subgroup samplers cannot run,
    // while vanilla training still can.
    let dir = tempfile::tempdir().unwrap();
    let mut train = String::from("f0,f1,y,b\n");
    for i in 0..40 {
        let v = i as f64 / 10.0;
        train += &format!("{v},{},0,{}\n", -v, i % 2);
        if i % 2 == 1 {
            train += &format!("{},{v},1,1\n", -v);
        }
    }
    let mut test = String::from("id,f0,f1,y,b\n");
    for (i, (y, b)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
        test += &format!("{},{}.5,0.5,{y},{b}\n", 1000 + i, i);
    }
    fs::write(dir.path().join("train.csv"), train).unwrap();
    fs::write(dir.path().join("test.csv"), test).unwrap();
    let cfg = config(
        r#"
methods = ["vanilla", "us"]
seeds = [0]

[data]
kind = "csv"
path = "train.csv"
num_classes = 2
num_groups = 2

[test]
kind = "csv"
path = "test.csv"

[train]
epochs = 1
batch_size = 8
learning_rate = 0.1

[train.model]
latent_dim = 1
architecture = { kind = "linear" }
"#,
        dir.path(),
    );
    let records = cmd_run(&cfg, &dir.path().join("out"), Format::Csv).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].status, "ok");
    assert!(records[1].status.starts_with("error"), "{}", records[1].status);
    assert_eq!(records[1].exit_code, 3);
    let csv = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("us,0,,,,") && l.contains("error")));
    assert!(csv.lines().any(|l| l.starts_with("us,summary,") && l.contains("partial")));
}

#[test]
fn json_metrics_carry_hash_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(SMALL, dir.path());
    cmd_run(&cfg, &dir.path().join("out"), Format::Json).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/metrics.json")).unwrap()).unwrap();
    assert_eq!(json["config_hash"], cfg.hash());
    assert_eq!(json["runs"].as_array().unwrap().len(), 4);
    assert_eq!(json["summary"].as_array().unwrap().len(), 2);
    let bm = &json["runs"][2];
    assert_eq!(bm["method"], "bm");
    assert!(bm["eq1"]["max_residual"].as_f64().unwrap() <= bm["eq1"]["bound"].as_f64().unwrap());
}
