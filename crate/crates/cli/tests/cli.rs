//! Subcommands and run directories exercised on small stand-in corpora.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use cxr_cli::config::{NetworkConfig, Paths, PreprocessConfig};
use cxr_cli::{cmd_preprocess, cmd_report, cmd_run_scenario, CliError, RunConfig, Scenario};
use cxr_core::dataset::{fuse, preset, split};
use cxr_core::imbalance::OversampleTarget;
use cxr_core::synthetic::{fused_corpus_manifests, write_placeholder_images};
use cxr_core::{Finding, Manifest, SampleRecord, Source, Split, ThresholdParams};

fn cxr() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cxr"));
    cmd.env_remove("CXR_OUTPUT_ROOT");
    cmd
}

fn status(cmd: &mut Command) -> i32 {
    let out = cmd.output().unwrap();
    out.status.code().unwrap()
}

/// Twelve records per finding: eight train, two val, two test.
fn small_corpus(root: &Path, size: usize) -> PathBuf {
    let mut records = Vec::new();
    for finding in Finding::ALL {
        for i in 0..12 {
            let mut r = SampleRecord::new(
                format!("{finding:?}/{i:02}.png").to_lowercase(),
                Source::SYNTHETIC,
                finding,
            );
            r.split = match i {
                0..8 => Split::Train,
                8..10 => Split::Val,
                _ => Split::Test,
            };
            records.push(r);
        }
    }
    let m = Manifest::new(records).unwrap();
    write_placeholder_images(&m, root, size, 1).unwrap();
    let path = root.join("manifest.csv");
    m.save(&path).unwrap();
    path
}

fn tiny_config(manifest: &Path, out: &Path, scenario: &str) -> RunConfig {
    let mut cfg = RunConfig {
        name: "tiny".into(),
        seed: 3,
        network: NetworkConfig {
            input_size: 8,
            block_widths: vec![4],
            hidden: 8,
            ..Default::default()
        },
        paths: Paths {
            manifest: Some(manifest.to_path_buf()),
            image_root: None,
            output_dir: Some(out.to_path_buf()),
        },
        ..Default::default()
    };
    cfg.set_scenario(scenario.parse().unwrap());
    cfg.train.max_epochs = 2;
    cfg.train.batch_size = 8;
    cfg
}

fn preprocess_config() -> PreprocessConfig {
    PreprocessConfig {
        threshold: Some(ThresholdParams::new(240.0, 255.0).unwrap()),
        size: 16,
        ..Default::default()
    }
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn preprocess_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = small_corpus(dir.path(), 20);
    let m = Manifest::load(&manifest_path).unwrap();
    let cfg = preprocess_config();
    let a = cmd_preprocess(&cfg, &m, dir.path(), &dir.path().join("a"), true).unwrap();
    let b = cmd_preprocess(&cfg, &m, dir.path(), &dir.path().join("b"), true).unwrap();
    assert!(a.failures.is_empty());
    assert_eq!(a.manifest, b.manifest);
    let (ta, tb) = (tree(&a.out_dir), tree(&b.out_dir));
    assert_eq!(ta.len(), tb.len());
    assert!(ta == tb, "outputs differ");
}

#[test]
fn keep_stages_writes_four_images_per_input() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = small_corpus(dir.path(), 20);
    let m = Manifest::load(&manifest_path).unwrap();
    let out = cmd_preprocess(&preprocess_config(), &m, dir.path(), &dir.path().join("p"), true).unwrap();
    let stages = tree(&out.out_dir.join("stages"));
    assert_eq!(stages.len(), 4 * m.len());
    let first = Path::new(&m.records[0].path).with_extension("");
    for stage in ["mask", "inpainted", "resized", "denoised"] {
        let name = format!("{}.{stage}.png", first.display());
        assert!(stages.contains_key(Path::new(&name)), "{name}");
    }
    let img = cxr_core::GrayImage::load(out.image_root().join(&out.manifest.records[0].path)).unwrap();
    assert_eq!((img.width(), img.height()), (16, 16));
    let hist = fs::read_to_string(out.out_dir.join("histograms").join(first.with_extension("csv"))).unwrap();
    assert_eq!(
        hist.lines().next().unwrap(),
        "lower,upper,raw,inpainted,resized,denoised"
    );
    assert_eq!(hist.lines().count(), 257);
    let without = cmd_preprocess(&preprocess_config(), &m, dir.path(), &dir.path().join("q"), false).unwrap();
    assert!(!without.out_dir.join("stages").exists());
}

#[test]
fn corrupt_input_is_logged_and_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = small_corpus(dir.path(), 20);
    let m = Manifest::load(&manifest_path).unwrap();
    let bad = &m.records[5].path;
    fs::write(dir.path().join(bad), b"not an image").unwrap();
    let out = dir.path().join("pre");
    let code = status(
        cxr()
            .args(["preprocess", "--size", "16", "--min-th", "240", "--max-th", "255"])
            .arg("--manifest")
            .arg(&manifest_path)
            .arg("--out-dir")
            .arg(&out),
    );
    assert_eq!(code, 1);
    let failures = fs::read_to_string(out.join("failures.log")).unwrap();
    assert_eq!(failures.lines().count(), 1);
    assert!(failures.starts_with(bad.as_str()));
    assert_eq!(Manifest::load(out.join("manifest.csv")).unwrap().len(), m.len() - 1);
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = small_corpus(dir.path(), 12);
    let no_thresholds = status(
        cxr()
            .arg("preprocess")
            .arg("--manifest")
            .arg(&manifest_path)
            .arg("--out-dir")
            .arg(dir.path().join("x")),
    );
    assert_eq!(no_thresholds, 2);
    let bad_json = dir.path().join("bad.json");
    fs::write(&bad_json, "{ \"train\": { \"batch_size\": \"ten\" } }").unwrap();
    assert_eq!(status(cxr().arg("train").arg("--config").arg(&bad_json)), 2);
    assert_eq!(status(cxr().args(["train", "--scenario", "XB"])), 2);
    let no_manifest = status(cxr().arg("train").arg("--output-dir").arg(dir.path()));
    assert_eq!(no_manifest, 2);
    let missing_run = status(cxr().arg("report").arg(dir.path().join("nope")));
    assert_eq!(missing_run, 1);
}

#[test]
fn rb_on_published_split_trains_on_1920_records() {
    let dir = tempfile::tempdir().unwrap();
    let p = preset("table2-rb").unwrap();
    let m = split(&fuse(&fused_corpus_manifests()).unwrap(), p.scheme, &p.counts, 5).unwrap();
    write_placeholder_images(&m, dir.path(), 8, 2).unwrap();
    let manifest_path = dir.path().join("split.csv");
    m.save(&manifest_path).unwrap();
    let mut cfg = tiny_config(&manifest_path, &dir.path().join("runs"), "RB");
    cfg.oversample_target = OversampleTarget::PerClass(p.oversample_target.unwrap());
    cfg.train.max_epochs = 1;
    cfg.train.batch_size = 64;
    let run = cmd_run_scenario(&cfg).unwrap();
    assert_eq!(run.summary.train_counts, vec![960, 960]);
    assert_eq!(run.summary.synthesized, 1920 - 994);
    let train = Manifest::load(run.run_dir.join("train_manifest.csv"))
        .unwrap()
        .subset(Split::Train);
    assert_eq!(train.len(), 1920);
    assert_eq!(run.summary.class_weights, vec![1.0, 1.0]);
    assert_eq!(
        fs::read_dir(run.run_dir.join("oversampled")).unwrap().count(),
        1920 - 994
    );
    assert_eq!(run.report.confusion.total(), 121);
}

#[test]
fn cb_logs_weights_and_synthesizes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = small_corpus(dir.path(), 12);
    let run = cmd_run_scenario(&tiny_config(&manifest_path, &dir.path().join("runs"), "CB")).unwrap();
    assert!(!run.run_dir.join("oversampled").exists());
    assert!(!run.run_dir.join("train_manifest.csv").exists());
    assert_eq!(run.summary.synthesized, 0);
    let table: serde_json::Value =
        serde_json::from_slice(&fs::read(run.run_dir.join("class_weights.json")).unwrap()).unwrap();
    assert_eq!(table["counts"], serde_json::json!([24, 8]));
    let w: Vec<f64> = serde_json::from_value(table["weights"].clone()).unwrap();
    assert!((w[0] - 32.0 / 48.0).abs() < 1e-12 && (w[1] - 2.0).abs() < 1e-12);
    assert_eq!(run.summary.class_weights, w);
}

#[test]
fn same_config_and_seed_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = small_corpus(dir.path(), 12);
    for scenario in ["CM3", "RM4"] {
        let a = cmd_run_scenario(&tiny_config(&manifest_path, &dir.path().join("a"), scenario)).unwrap();
        let b = cmd_run_scenario(&tiny_config(&manifest_path, &dir.path().join("b"), scenario)).unwrap();
        assert_eq!(a.report, b.report, "{scenario}");
        assert_eq!(
            fs::read(a.run_dir.join("report.json")).unwrap(),
            fs::read(b.run_dir.join("report.json")).unwrap()
        );
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.provenance.input_hash, b.provenance.input_hash);
    }
}

#[test]
fn run_directory_is_self_describing() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = small_corpus(dir.path(), 12);
    let cfg = tiny_config(&manifest_path, &dir.path().join("runs"), "CM4");
    let run = cmd_run_scenario(&cfg).unwrap();
    let name = run.run_dir.file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with("CM4-tiny-"), "{name}");
    for f in [
        "config.json",
        "provenance.json",
        "run.json",
        "report.json",
        "trace.csv",
        "model.ckpt",
    ] {
        assert!(run.run_dir.join(f).is_file(), "{f}");
    }
    let snapshot = RunConfig::load(&run.run_dir.join("config.json")).unwrap();
    assert_eq!(snapshot, cfg.clone().resolve().unwrap());
    assert_eq!(run.provenance.seed, 3);
    assert_eq!(run.provenance.input_hash.len(), 64);
    let trace = fs::read_to_string(run.run_dir.join("trace.csv")).unwrap();
    assert_eq!(
        trace.lines().count(),
        1 + 2 * run.summary.epochs_run,
        "train and val rows per epoch"
    );

    // Rerunning from the snapshot lands in the same directory with the same report.
    let again = cmd_run_scenario(&snapshot).unwrap();
    assert_eq!(again.run_dir, run.run_dir);
    assert_eq!(again.report, run.report);

    let m = Manifest::load(&manifest_path).unwrap();
    let img = dir.path().join(&m.records[0].path);
    let mut bytes = fs::read(&img).unwrap();
    let g = cxr_core::GrayImage::load(&img).unwrap();
    let flipped = cxr_core::GrayImage::from_fn(g.width(), g.height(), |x, y| 255.0 - g.get(x, y)).unwrap();
    flipped.save(&img).unwrap();
    assert_ne!(fs::read(&img).unwrap(), std::mem::take(&mut bytes));
    let changed = cmd_run_scenario(&cfg).unwrap();
    assert_ne!(changed.provenance.input_hash, run.provenance.input_hash);
    assert_ne!(changed.run_dir, run.run_dir);
}

#[test]
fn report_covers_every_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = small_corpus(dir.path(), 12);
    let codes = ["CB", "CM3", "CM4", "RB", "RM3", "RM4"];
    let mut dirs = Vec::new();
    for code in codes {
        let mut cfg = tiny_config(&manifest_path, &dir.path().join("runs"), code);
        cfg.train.max_epochs = 1;
        let run = cmd_run_scenario(&cfg).unwrap();
        assert_eq!(run.scenario, code.parse::<Scenario>().unwrap());
        dirs.push(run.run_dir);
    }
    // Reverse order so labels cannot come from position.
    dirs.reverse();
    let table = cmd_report(&dirs).unwrap();
    assert_eq!(table.rows.len(), 6);
    let labels: Vec<&str> = table.rows.iter().map(|r| r.scenario.as_str()).collect();
    assert_eq!(labels, ["RM4", "RM3", "RB", "CM4", "CM3", "CB"]);
    for col in 0..6 {
        let best = table
            .rows
            .iter()
            .filter_map(|r| r.values[col])
            .fold(f64::NEG_INFINITY, f64::max);
        for r in &table.rows {
            assert_eq!(r.best[col], r.values[col] == Some(best));
        }
        assert!(table.rows.iter().any(|r| r.best[col]));
    }
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("model,scenario,accuracy,precision,recall,auc,specificity,f1,best_accuracy"));

    let out = dir.path().join("table.csv");
    let code = status(cxr().arg("report").args(&dirs).arg("--out").arg(&out));
    assert_eq!(code, 0);
    assert_eq!(fs::read_to_string(&out).unwrap(), csv);

    let single = cmd_report(&dirs[..1]).unwrap();
    assert_eq!(single.rows.len(), 1);
    assert!(single.rows[0]
        .best
        .iter()
        .zip(single.rows[0].values)
        .all(|(&b, v)| b == v.is_some()));
    assert!(matches!(cmd_report(&[]), Err(CliError::MissingRun { .. })));
    fs::remove_file(dirs[0].join("report.json")).unwrap();
    assert!(matches!(cmd_report(&dirs), Err(CliError::MissingRun { .. })));
}

#[test]
fn pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        status(cxr().args(["synth", "corpus", "--size", "0"]).arg("--out-dir").arg(d)),
        0
    );
    let fused = d.join("fused.csv");
    let code = status(
        cxr()
            .arg("fuse")
            .args(["covid19.csv", "rsna.csv", "nlmmc.csv"].map(|f| d.join(f)))
            .arg("--out")
            .arg(&fused),
    );
    assert_eq!(code, 0);
    assert_eq!(Manifest::load(&fused).unwrap().len(), 1214);
    let split_path = d.join("split.csv");
    let code = status(
        cxr()
            .arg("split")
            .arg("--manifest")
            .arg(&fused)
            .args(["--preset", "table2-cm4", "--seed", "4", "--out"])
            .arg(&split_path),
    );
    assert_eq!(code, 0);
    let m = Manifest::load(&split_path).unwrap();
    assert_eq!(
        m.subset(Split::Test).class_counts(cxr_core::LabelScheme::Multi4),
        vec![52, 11, 52, 6]
    );

    let discs = d.join("discs");
    let code = status(
        cxr()
            .args([
                "synth", "discs", "--size", "16", "--train", "6/6", "--val", "2/2", "--test", "2/2",
            ])
            .arg("--out-dir")
            .arg(&discs),
    );
    assert_eq!(code, 0);
    let runs = d.join("runs");
    let config = d.join("tiny.json");
    fs::write(
        &config,
        r#"{"network": {"block_widths": [4, 4], "hidden": 8}, "train": {"batch_size": 4}}"#,
    )
    .unwrap();
    let code = status(
        cxr()
            .arg("train")
            .arg("--config")
            .arg(&config)
            .arg("--manifest")
            .arg(discs.join("manifest.csv"))
            .args([
                "--scenario",
                "cb",
                "--input-size",
                "16",
                "--epochs",
                "1",
                "--name",
                "bin",
            ])
            .env("CXR_OUTPUT_ROOT", &runs),
    );
    assert_eq!(code, 0);
    let run_dir = fs::read_dir(&runs).unwrap().next().unwrap().unwrap().path();
    let model = run_dir.join("model.ckpt");

    let eval_out = d.join("eval.json");
    let code = status(
        cxr()
            .arg("evaluate")
            .arg("--model")
            .arg(&model)
            .arg("--manifest")
            .arg(discs.join("manifest.csv"))
            .arg("--out")
            .arg(&eval_out),
    );
    assert_eq!(code, 0);
    let report: cxr_core::EvalReport = serde_json::from_slice(&fs::read(&eval_out).unwrap()).unwrap();
    assert_eq!(report.confusion.total(), 4);

    let image = discs.join("test/bright_0000.png");
    for method in ["gradcam", "lime"] {
        let out = d.join(format!("{method}.png"));
        let code = status(
            cxr()
                .arg("explain")
                .arg("--model")
                .arg(&model)
                .arg("--image")
                .arg(&image)
                .args(["--method", method, "--samples", "50", "--grid", "4x4", "--out"])
                .arg(&out),
        );
        assert_eq!(code, 0, "{method}");
        assert!(out.is_file() && out.with_extension("json").is_file());
    }

    let trace = d.join("trace.csv");
    let code = status(
        cxr()
            .arg("denoise")
            .arg(&image)
            .arg(d.join("den.png"))
            .arg("--trace")
            .arg(&trace),
    );
    assert_eq!(code, 0);
    assert!(fs::read_to_string(&trace).unwrap().starts_with("iter,energy\n"));
}
