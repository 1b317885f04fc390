use std::fs;
use std::path::Path;

use sparse_ticket::data::{load_idx, render_digits, write_idx, Split};
use sparse_ticket::experiment::{
    emit_report, load_results, parse_config, parse_config_str, run_matrix, ExperimentConfig, RunOptions,
};
use sparse_ticket::strategies::StrategyKind;
use sparse_ticket::Error;

const SMALL: &str = r#"
seeds = [0, 1]
ratios = [0.5, 0.9]
strategies = ["scratch", "rst", "lth", "rst-iter"]

[network]
input_shape = [4]
layers = [
  { kind = "dense", inputs = 4, outputs = 16 },
  { kind = "relu" },
  { kind = "dense", inputs = 16, outputs = 16 },
  { kind = "relu" },
  { kind = "dense", inputs = 16, outputs = 3 },
]

[dataset]
source = "synthetic"
kind = "blobs"
n_per_class = 40
classes = 3
noise = 1.0
dim = 4
seed = 3

[finetune]
epochs = 2
lr = [[0, 0.05], [1, 0.01]]
batch_size = 16

[rst]
eta = 0.1
v_s = 20

[rst_iter]
cycles = 2
eta = 0.2
v_s = 10
"#;

fn small(out: &Path) -> ExperimentConfig {
    let mut cfg = parse_config_str(SMALL, Path::new("small.toml"), Path::new("."), None).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn idx_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = render_digits(30, 12, 5, Split::Train).unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    write_idx(&data, &img, &lab).unwrap();
    let back = load_idx(&img, &lab).unwrap();
    assert_eq!(back.labels(), data.labels());
    assert_eq!(back.sample_shape(), data.sample_shape());
    assert_eq!(back.checksum(), data.checksum());
}

#[test]
fn corrupt_idx_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = render_digits(10, 8, 0, Split::Test).unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    write_idx(&data, &img, &lab).unwrap();
    let bytes = fs::read(&img).unwrap();
    fs::write(&img, &bytes[..bytes.len() - 7]).unwrap();
    assert!(load_idx(&img, &lab).is_err());
}

#[test]
fn config_round_trips_through_toml() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let path = dir.path().join("config.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let back = parse_config(&path, None).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.digest().unwrap(), cfg.digest().unwrap());
}

#[test]
fn unknown_keys_are_rejected() {
    let text = SMALL.replace("[finetune]", "[finetune]\nlearning_rate = 0.1");
    let err = parse_config_str(&text, Path::new("bad.toml"), Path::new("."), None).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
}

#[test]
fn resume_reuses_finished_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let first = run_matrix(&cfg, RunOptions { resume: false }).unwrap();
    assert!(first.failures.is_empty(), "{:?}", first.failures);
    assert_eq!(first.results.len(), 4 * 2 * 2);
    emit_report(&first.results, dir.path()).unwrap();
    let csv = fs::read(dir.path().join("results.csv")).unwrap();

    // Drop one finished cell so the resumed run has exactly one to redo.
    let victim = dir.path().join("cells").join(format!("{}.json", first.results[3].key.stem()));
    fs::remove_file(&victim).unwrap();
    let second = run_matrix(&cfg, RunOptions { resume: true }).unwrap();
    assert_eq!(second.resumed, first.results.len() - 1);
    emit_report(&second.results, dir.path()).unwrap();
    assert_eq!(fs::read(dir.path().join("results.csv")).unwrap(), csv);

    let loaded = load_results(dir.path()).unwrap();
    assert_eq!(loaded.len(), first.results.len());
    assert!(loaded.iter().any(|r| r.key.strategy == StrategyKind::RstIter && !r.trace.is_empty()));
}

#[test]
fn resume_refuses_a_different_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.strategies = vec![StrategyKind::Scratch];
    cfg.seeds = vec![0];
    run_matrix(&cfg, RunOptions { resume: false }).unwrap();
    cfg.finetune.epochs = 3;
    let err = run_matrix(&cfg, RunOptions { resume: true }).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn report_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.strategies = vec![StrategyKind::Scratch, StrategyKind::Rst];
    let out = run_matrix(&cfg, RunOptions { resume: false }).unwrap();
    emit_report(&out.results, dir.path()).unwrap();
    for name in ["results.csv", "summary.csv", "timing.csv", "curves.jsonl", "traces.jsonl", "accuracy_r0.9000.svg"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 2);
    assert!(summary.contains('±'));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = parse_config(&path, None).unwrap();
            cfg.validate().unwrap();
            n += 1;
        }
    }
    assert!(n >= 2);
}
