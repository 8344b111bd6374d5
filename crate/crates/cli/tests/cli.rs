use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn seqpatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqpatch"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn seqpatch")
}

fn ok(args: &[&str]) -> String {
    let out = seqpatch(args);
    assert!(
        out.status.success(),
        "seqpatch {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, value: Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_vec_pretty(&value).unwrap()).unwrap();
    p
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    files
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn paired_synth_writes_twins_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let line = ok(&[
        "synth",
        "--out",
        s(&out),
        "--count",
        "2",
        "--paired",
        "--seed",
        "3",
    ]);
    assert!(line.starts_with("stage=synth "), "{line}");

    let images = fs::read_dir(out.join("images")).unwrap().count();
    assert_eq!(images, 4);
    let manifest: Value =
        serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let samples = manifest["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 4);
    assert_eq!(
        samples
            .iter()
            .filter(|s| s["has_stains"] == json!(true))
            .count(),
        2
    );
}

#[test]
fn synth_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "synth",
            "--out",
            s(out),
            "--count",
            "3",
            "--stains",
            "on",
            "--dr",
            "--seed",
            "11",
        ]);
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        if k.extension().is_some_and(|e| e == "json") && k.to_string_lossy().contains("run") {
            continue;
        }
        assert!(v == &tb[k], "{} differs", k.display());
    }
    // three light variants per sample
    assert_eq!(fs::read_dir(a.join("images")).unwrap().count(), 9);
}

#[test]
fn oversized_stains_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        json!({"dataset": {"stain": {"radius": [5.0, 8.0], "amplitude": [1.0, 2.5], "cell_size": 9.0}}}),
    );
    let out = seqpatch(&[
        "synth",
        "-c",
        s(&cfg),
        "--out",
        s(&dir.path().join("ds")),
        "--stains",
        "on",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));

    // the same ranges without stains are fine
    ok(&[
        "synth",
        "-c",
        s(&cfg),
        "--out",
        s(&dir.path().join("ok")),
        "--count",
        "1",
        "--stains",
        "off",
    ]);
}

#[test]
fn bad_config_and_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        json!({"coreset": {"capacity": 8, "typo": 1}}),
    );
    let out = seqpatch(&["synth", "-c", s(&cfg), "--out", s(&dir.path().join("ds"))]);
    assert_eq!(code(&out), 2);

    let out = seqpatch(&["synth", "--count", "1"]);
    assert_eq!(code(&out), 2, "missing --out");

    let missing = dir.path().join("none.json");
    assert_eq!(
        code(&seqpatch(&["synth", "-c", s(&missing), "--out", "x"])),
        3
    );

    let out = seqpatch(&[
        "train",
        "--dataset",
        s(&dir.path().join("nothing")),
        "--out",
        s(&dir.path().join("b.sqcs")),
    ]);
    assert_eq!(code(&out), 3);

    let junk = dir.path().join("junk.sqcs");
    fs::write(&junk, b"not a coreset").unwrap();
    let out = seqpatch(&[
        "meld",
        s(&junk),
        "--size",
        "4",
        "--out",
        s(&dir.path().join("m.sqcs")),
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn meld_rejects_mixed_extractors() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    ok(&["synth", "--out", s(&ds), "--count", "2", "--seed", "1"]);
    let other = write_config(
        dir.path(),
        "other.json",
        json!({"extractor": {"kind": "local_stats", "levels": [{"stride": 4, "window": 8}], "pool_kernel": 1}}),
    );
    let a = dir.path().join("a.sqcs");
    let b = dir.path().join("b.sqcs");
    ok(&[
        "train",
        "--dataset",
        s(&ds),
        "--out",
        s(&a),
        "--capacity",
        "16",
    ]);
    ok(&[
        "train",
        "-c",
        s(&other),
        "--dataset",
        s(&ds),
        "--out",
        s(&b),
        "--capacity",
        "16",
    ]);

    let out = seqpatch(&[
        "meld",
        s(&a),
        s(&b),
        "--size",
        "16",
        "--out",
        s(&dir.path().join("m.sqcs")),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    // a bank melded with itself keeps its members
    let m = dir.path().join("aa.sqcs");
    let line = ok(&["meld", s(&a), s(&a), "--size", "16", "--out", s(&m)]);
    assert!(line.starts_with("stage=meld inputs=2 "), "{line}");
}

#[test]
fn end_to_end_toy_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = write_config(
        root,
        "pipeline.json",
        json!({
            "dataset": {"count": 8, "validation_count": 4, "test_count": 4, "paired": true, "width": 64, "height": 64, "seed": 2},
            "coreset": {"capacity": 64, "chunk_size": 32, "max_epochs": 3},
            "paths": {"dataset": root.join("ds"), "report": root.join("report")}
        }),
    );
    let c = s(&cfg);

    ok(&["synth", "-c", c]);
    let a = root.join("clean.sqcs");
    let b = root.join("stained.sqcs");
    let clean = write_config(
        root,
        "clean.json",
        json!({
            "coreset": {"capacity": 64, "chunk_size": 32, "max_epochs": 3},
            "train": {"subset": "clean"},
            "paths": {"dataset": root.join("ds")}
        }),
    );
    ok(&["train", "-c", s(&clean), "--out", s(&a)]);
    let line = ok(&[
        "train",
        "-c",
        c,
        "--out",
        s(&b),
        "--checkpoint",
        s(&root.join("ckpt.sqcs")),
    ]);
    assert!(line.contains(" samples=16 "), "{line}");
    assert!(root.join("stained.run.json").exists());

    let m = root.join("melded.sqcs");
    ok(&[
        "meld",
        "-c",
        c,
        s(&a),
        s(&b),
        "--size",
        "64",
        "--out",
        s(&m),
    ]);

    let scores = root.join("scores");
    let line = ok(&[
        "score",
        "-c",
        c,
        s(&m),
        "--estimate-on",
        "validation",
        "--out",
        s(&scores),
    ]);
    assert!(line.starts_with("stage=score images=4 "), "{line}");
    let index: Value =
        serde_json::from_slice(&fs::read(scores.join("scores.json")).unwrap()).unwrap();
    let t = index["threshold"].as_f64().unwrap();

    // chunking never changes the maps
    let chunked = root.join("scores1");
    ok(&[
        "score",
        "-c",
        c,
        s(&m),
        "--threshold",
        &t.to_string(),
        "--chunk",
        "1",
        "--out",
        s(&chunked),
    ]);
    for e in index["entries"].as_array().unwrap() {
        for key in ["map_path", "mask_path"] {
            let rel = e[key].as_str().unwrap();
            assert_eq!(
                fs::read(scores.join(rel)).unwrap(),
                fs::read(chunked.join(rel)).unwrap(),
                "{rel}"
            );
        }
    }

    let line = ok(&[
        "eval",
        "-c",
        c,
        "--scores",
        s(&scores),
        "--sweep",
        "--overlays",
    ]);
    assert!(line.starts_with("stage=eval images=4 "), "{line}");
    let report: Value =
        serde_json::from_slice(&fs::read(root.join("report/report.json")).unwrap()).unwrap();
    let f1 = report["f1_px"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    assert_eq!(report["sweep"].as_array().unwrap().len(), 12);
    assert!(root.join("report/report.csv").exists());
    assert_eq!(
        fs::read_dir(root.join("report/overlays")).unwrap().count(),
        4
    );
    let run: Value =
        serde_json::from_slice(&fs::read(root.join("report/run.json")).unwrap()).unwrap();
    assert_eq!(run["stage"], "eval");
    assert!(!run["inputs"].as_object().unwrap().is_empty());

    // standalone images need a fixed threshold
    let img = root
        .join("ds/images")
        .read_dir()
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let out = seqpatch(&[
        "score",
        "-c",
        c,
        s(&m),
        s(&img),
        "--out",
        s(&root.join("single")),
    ]);
    assert_eq!(code(&out), 2);
    let line = ok(&[
        "score",
        "-c",
        c,
        s(&m),
        s(&img),
        "--threshold",
        "0.5",
        "--out",
        s(&root.join("single")),
    ]);
    assert!(line.starts_with("stage=score images=1 "), "{line}");
}
