use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use bodymesh::volume::{Sex, SubjectLabels};
use bodymesh_cli::pipeline::{self, Context};
use bodymesh_cli::{CliError, PipelineConfig};
use tempfile::TempDir;

/// One full run on the small example cohort, shared by the read-only tests.
fn full_run() -> &'static (TempDir, PipelineConfig) {
    static RUN: OnceLock<(TempDir, PipelineConfig)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let cfg = PipelineConfig::example(dir.path().join("out"));
        let ctx = Context::new(cfg.clone(), Some(2), false).unwrap();
        pipeline::run_all(&ctx).unwrap();
        pipeline::sweep(&ctx).unwrap();
        (dir, cfg)
    })
}

fn small(dir: &Path, cohort: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::example(dir.join("out"));
    cfg.cohort_size = cohort;
    cfg.train.k = 3;
    cfg
}

#[test]
fn smoke_all_stage_outputs_present() {
    let (_dir, cfg) = full_run();
    let root = &cfg.paths.root;
    for rel in [
        "synth/stage.json",
        "synth/labels.json",
        "synth/volumes/S00000.volhdr",
        "synth/volumes/S00019.volraw",
        "extract/stage.json",
        "extract/meshes/S00019.obj",
        "decimate/stage.json",
        "decimate/100/S00000.obj",
        "decimate/500/S00019.obj",
        "register/stage.json",
        "register/reference.json",
        "register/100/manifest.json",
        "register/500/transforms.json",
        "register/500/S00007.obj",
        "train/gnn-500/stage.json",
        "train/gnn-500/metrics.json",
        "train/gnn-500/metrics.csv",
        "train/gnn-500/split.json",
        "train/gnn-500/fold4.bin",
        "eval/gnn-500/metrics.csv",
        "eval/gnn-500/stage.json",
        "sweep/sweep.csv",
        "stats/histograms.csv",
        "stats/summary.json",
    ] {
        assert!(root.join(rel).is_file(), "{rel} missing");
    }
}

#[test]
fn stage_records_carry_config_and_input_hashes() {
    let (_dir, cfg) = full_run();
    let text = fs::read_to_string(cfg.paths.root.join("register/stage.json")).unwrap();
    let rec: bodymesh_cli::stage::StageRecord = serde_json::from_str(&text).unwrap();
    assert_eq!(&rec.config, cfg);
    assert_eq!(rec.inputs.keys().collect::<Vec<_>>(), ["decimate", "synth"]);
    assert!(rec.outputs.values().all(|h| h.len() == 64));
}

#[test]
fn eval_reproduces_training_metrics() {
    let (_dir, cfg) = full_run();
    let strip = |p: &str| -> Vec<String> {
        fs::read_to_string(cfg.paths.root.join(p))
            .unwrap()
            .lines()
            .map(|l| l.split(',').take(7).collect::<Vec<_>>().join(","))
            .collect()
    };
    assert_eq!(strip("train/gnn-500/metrics.csv"), strip("eval/gnn-500/metrics.csv"));
}

#[test]
fn decimate_rerun_is_byte_identical() {
    let (dir, cfg) = full_run();
    let copy = dir.path().join("copy");
    fs::create_dir_all(&copy).unwrap();
    let before: Vec<Vec<u8>> = cfg
        .levels
        .iter()
        .map(|l| fs::read(cfg.paths.root.join(format!("decimate/{l}/S00003.obj"))).unwrap())
        .collect();
    let mut cfg2 = cfg.clone();
    cfg2.paths.root = copy.join("out");
    let ctx = Context::new(cfg2.clone(), Some(1), false).unwrap();
    pipeline::synth(&ctx).unwrap();
    pipeline::extract(&ctx).unwrap();
    pipeline::decimate_cmd(&ctx).unwrap();
    let first: Vec<Vec<u8>> = cfg2
        .levels
        .iter()
        .map(|l| fs::read(cfg2.paths.root.join(format!("decimate/{l}/S00003.obj"))).unwrap())
        .collect();
    pipeline::decimate_cmd(&ctx).unwrap();
    let second: Vec<Vec<u8>> = cfg2
        .levels
        .iter()
        .map(|l| fs::read(cfg2.paths.root.join(format!("decimate/{l}/S00003.obj"))).unwrap())
        .collect();
    assert_eq!(first, second);
    // Thread count does not change the output either.
    assert_eq!(first, before);
}

#[test]
fn stats_follow_generator_sex_differences() {
    let (_dir, cfg) = full_run();
    let text = fs::read_to_string(cfg.paths.root.join("stats/summary.json")).unwrap();
    let groups: Vec<pipeline::GroupSummary> = serde_json::from_str(&text).unwrap();
    let mean = |tissue: &str, sex: Sex| {
        groups.iter().find(|g| g.tissue == tissue && g.sex == sex).unwrap().mean_mm3.unwrap()
    };
    assert!(mean("VAT", Sex::M) > mean("VAT", Sex::F));
    assert!(mean("ASAT", Sex::F) > mean("ASAT", Sex::M));

    let csv = fs::read_to_string(cfg.paths.root.join("stats/histograms.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("tissue,sex,bin_lo_mm3,bin_hi_mm3,count"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 2 * cfg.stats.bins);
    let total: usize = rows
        .iter()
        .filter(|r| r.starts_with("VAT,"))
        .map(|r| r.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, cfg.cohort_size);
}

#[test]
fn histograms_share_bins_across_sexes() {
    let labels: Vec<SubjectLabels> = (0..30)
        .map(|i| SubjectLabels {
            subject_id: format!("S{i:05}"),
            vat_mm3: 1000.0 * (i * 7 % 13) as f64,
            asat_mm3: 500.0 * (i * 5 % 11) as f64,
            sex: if i % 3 == 0 { Sex::M } else { Sex::F },
            height_mm: 1700.0,
            weight_kg: 70.0,
            age_years: 50.0,
        })
        .collect();
    let (rows, summary) = pipeline::histograms(&labels, 5);
    let f: Vec<_> = rows.iter().filter(|r| r.tissue == "ASAT" && r.sex == Sex::F).map(|r| (r.lo, r.hi)).collect();
    let m: Vec<_> = rows.iter().filter(|r| r.tissue == "ASAT" && r.sex == Sex::M).map(|r| (r.lo, r.hi)).collect();
    assert_eq!(f, m);
    assert_eq!(f.len(), 5);
    assert_eq!(f[0].0, 0.0);
    assert_eq!(f[4].1, 5000.0);
    let counts: usize = rows.iter().filter(|r| r.tissue == "ASAT").map(|r| r.count).sum();
    assert_eq!(counts, 30);
    assert_eq!(summary.iter().filter(|g| g.tissue == "VAT").map(|g| g.n).sum::<usize>(), labels.len());
}

#[test]
fn missing_prerequisite_names_command() {
    let dir = TempDir::new().unwrap();
    let ctx = Context::new(small(dir.path(), 6), Some(1), false).unwrap();
    match pipeline::extract(&ctx) {
        Err(e @ CliError::Missing { command: "synth", .. }) => {
            assert_eq!(e.exit_code(), 3);
            assert!(e.to_string().contains("bodymesh synth"));
        }
        other => panic!("expected missing synth, got {other:?}"),
    }
    match pipeline::train(&ctx) {
        Err(CliError::Missing { command: "synth", .. }) => {}
        other => panic!("expected missing synth, got {other:?}"),
    }
}

#[test]
fn tampered_input_is_refused_unless_forced() {
    let dir = TempDir::new().unwrap();
    let cfg = small(dir.path(), 6);
    let ctx = Context::new(cfg.clone(), Some(1), false).unwrap();
    pipeline::synth(&ctx).unwrap();
    let raw = cfg.paths.root.join("synth/volumes/S00002.volraw");
    let mut bytes = fs::read(&raw).unwrap();
    let i = bytes.len() / 2;
    bytes[i] ^= 1;
    fs::write(&raw, &bytes).unwrap();
    match pipeline::extract(&ctx) {
        Err(e @ CliError::Stale { command: "synth", .. }) => assert_eq!(e.exit_code(), 3),
        other => panic!("expected stale synth, got {other:?}"),
    }
    let forced = Context::new(cfg, Some(1), true).unwrap();
    pipeline::extract(&forced).unwrap();
}

#[test]
fn changed_config_makes_downstream_stale() {
    let dir = TempDir::new().unwrap();
    let cfg = small(dir.path(), 6);
    pipeline::synth(&Context::new(cfg.clone(), Some(1), false).unwrap()).unwrap();
    let mut other = cfg;
    other.seed += 1;
    match pipeline::extract(&Context::new(other, Some(1), false).unwrap()) {
        Err(CliError::Stale { command: "synth", .. }) => {}
        r => panic!("expected stale synth, got {r:?}"),
    }
}

fn example_json() -> serde_json::Value {
    serde_json::to_value(PipelineConfig::example("out")).unwrap()
}

#[test]
fn config_round_trips() {
    let text = serde_json::to_string_pretty(&example_json()).unwrap();
    assert_eq!(PipelineConfig::parse(&text).unwrap(), PipelineConfig::example("out"));
}

#[test]
fn config_errors_name_field_or_line() {
    let mut v = example_json();
    v["levels"] = serde_json::json!([500, 100]);
    let e = PipelineConfig::parse(&v.to_string()).unwrap_err();
    assert!(matches!(e, CliError::Config(ref m) if m.starts_with("levels:")), "{e}");
    assert_eq!(e.exit_code(), 2);

    let mut v = example_json();
    v["train_level"] = serde_json::json!(1000);
    assert!(matches!(PipelineConfig::parse(&v.to_string()), Err(CliError::Config(m)) if m.starts_with("train_level:")));

    let mut v = example_json();
    v["schema_version"] = serde_json::json!(99);
    assert!(matches!(PipelineConfig::parse(&v.to_string()), Err(CliError::Config(m)) if m.starts_with("schema_version:")));

    let mut v = example_json();
    v["train"]["batch_size"] = serde_json::json!(1);
    assert!(matches!(PipelineConfig::parse(&v.to_string()), Err(CliError::Config(m)) if m.starts_with("train:")));

    let mut v = example_json();
    v["sweep"]["levels"] = serde_json::json!([300]);
    assert!(matches!(PipelineConfig::parse(&v.to_string()), Err(CliError::Config(m)) if m.starts_with("sweep.levels:")));

    let mut text = serde_json::to_string_pretty(&example_json()).unwrap();
    text = text.replacen("\"seed\"", "\"sede\"", 1);
    let line = text.lines().position(|l| l.contains("sede")).unwrap() + 1;
    match PipelineConfig::parse(&text) {
        Err(CliError::Config(m)) => {
            assert!(m.contains("unknown field `sede`"), "{m}");
            assert!(m.contains(&format!("line {line}")), "{m}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn config_relative_root_resolves_against_file() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(&path, serde_json::to_string(&example_json()).unwrap()).unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.paths.root, dir.path().join("out"));

    let mut v = example_json();
    v["paths"]["root"] = serde_json::json!("no/such/parent/out");
    fs::write(&path, v.to_string()).unwrap();
    assert!(matches!(PipelineConfig::load(&path), Err(CliError::Config(m)) if m.contains("paths.root")));
}

fn bodymesh() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bodymesh"))
}

#[test]
fn binary_exit_codes() {
    let help = bodymesh().arg("--help").output().unwrap();
    assert!(help.status.success());
    let text = String::from_utf8_lossy(&help.stdout);
    for needle in ["Exit codes", "2  configuration error", "3  missing", "4  numeric"] {
        assert!(text.contains(needle), "help lacks {needle}");
    }

    let dir = TempDir::new().unwrap();
    let status = bodymesh().args(["synth", "--config"]).arg(dir.path().join("absent.json")).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let path = dir.path().join("cfg.json");
    let mut v = example_json();
    v["cohort_size"] = serde_json::json!(6);
    v["train"]["k"] = serde_json::json!(3);
    fs::write(&path, v.to_string()).unwrap();
    let status = bodymesh().arg("--config").arg(&path).arg("register").status().unwrap();
    assert_eq!(status.code(), Some(3));

    let out = bodymesh().arg("--config").arg(&path).args(["--seed", "11", "--jobs", "1", "synth"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rec = fs::read_to_string(dir.path().join("out/synth/stage.json")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(&rec).unwrap();
    assert_eq!(rec["config"]["seed"], 11);
}
