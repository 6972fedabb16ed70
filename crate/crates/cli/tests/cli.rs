use std::path::Path;
use std::process::{Command, Output};

fn stepparse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stepparse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn print_config_round_trips() {
    let out = stepparse(&["--print-config", "--seed", "9"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed = 9"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, &text).unwrap();
    let again = stepparse(&["--print-config", "--config", path(&cfg)]);
    assert!(again.status.success());
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn synth_parse_eval() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    let p = dir.path().join("p");
    let out = stepparse(&[
        "synth",
        "--videos",
        "4",
        "--frames",
        "40",
        "--dims",
        "10",
        "--steps",
        "3",
        "--seed",
        "3",
        "--out-dir",
        path(&s),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = stepparse(&[
        "parse",
        "--sequences",
        path(&s.join("sequences.dat")),
        "--sweeps",
        "40",
        "--out-dir",
        path(&p),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "model_state.json",
        "trace.csv",
        "segmentation.jsonl",
        "posteriors.json",
    ] {
        assert!(p.join(f).exists(), "{f}");
    }

    let out = stepparse(&[
        "eval",
        "--segmentation",
        path(&p.join("segmentation.jsonl")),
        "--posteriors",
        path(&p.join("posteriors.json")),
        "--gt",
        path(&s.join("gt.jsonl")),
        "--out",
        path(&dir.path().join("m.json")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("IOU_cms") && table.contains("mean"));
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "sweeps = 0\n").unwrap();
    let out = stepparse(&[
        "--config",
        path(&cfg),
        "pipeline",
        "--dataset",
        "x",
        "--out-dir",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = stepparse(&["--config", path(&cfg), "--print-config"]);
    assert_eq!(out.status.code(), Some(2));

    let out = stepparse(&["parse", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = stepparse(&[
        "parse",
        "--sequences",
        path(&dir.path().join("absent.dat")),
        "--out-dir",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.dat"));
}

#[test]
fn pipeline_on_synthetic_videos() {
    let dir = tempfile::tempdir().unwrap();
    let v = dir.path().join("v");
    let o = dir.path().join("o");
    let out = stepparse(&[
        "synth",
        "--kind",
        "videos",
        "--videos",
        "4",
        "--frames",
        "30",
        "--out-dir",
        path(&v),
    ]);
    assert!(out.status.success());
    let out = stepparse(&[
        "pipeline",
        "--dataset",
        path(&v.join("dataset.jsonl")),
        "--gt",
        path(&v.join("gt.jsonl")),
        "--out-dir",
        path(&o),
        "--sweeps",
        "30",
        "--eval",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(o.join("metrics.json").exists());
    assert!(o.join("captions.json").exists());
}

#[test]
fn stages_one_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    let v = dir.path().join("v");
    let d = v.join("dataset.jsonl");
    let run = |args: &[&str]| {
        let out = stepparse(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    };
    run(&[
        "synth",
        "--kind",
        "videos",
        "--videos",
        "4",
        "--frames",
        "30",
        "--out-dir",
        path(&v),
    ]);
    let lang = dir.path().join("lang.json");
    let vis = dir.path().join("vis.json");
    let seqs = dir.path().join("seq").join("sequences.dat");
    let table = run(&[
        "atoms",
        "--dataset",
        path(&d),
        "--count",
        "8",
        "--lang",
        "--out",
        path(&lang),
    ]);
    assert_eq!(table.lines().count(), 8);
    run(&[
        "cluster",
        "--dataset",
        path(&d),
        "--atoms",
        "4",
        "--knn-proposals",
        "2",
        "--out",
        path(&vis),
    ]);
    run(&[
        "filter",
        "--dataset",
        path(&d),
        "--out",
        path(&dir.path().join("split.json")),
    ]);
    std::fs::create_dir_all(seqs.parent().unwrap()).unwrap();
    run(&[
        "represent",
        "--dataset",
        path(&d),
        "--language",
        path(&lang),
        "--visual",
        path(&vis),
        "--frame-stride",
        "1",
        "--out",
        path(&seqs),
    ]);
    let p = dir.path().join("p");
    run(&[
        "parse",
        "--sequences",
        path(&seqs),
        "--sweeps",
        "20",
        "--out-dir",
        path(&p),
    ]);
    let captions = run(&[
        "caption",
        "--dataset",
        path(&d),
        "--results",
        path(&p.join("model_state.json")),
        "--vocabulary",
        path(&seqs.with_file_name("vocabulary.json")),
        "--out",
        path(&dir.path().join("captions.json")),
    ]);
    assert!(!captions.is_empty());
}
