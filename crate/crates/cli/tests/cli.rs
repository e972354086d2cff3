use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = r#"{
  "seed": 3,
  "data": {"signers": 2, "words": 10, "repetitions": 1, "folds": 4, "reported_folds": 2},
  "classifier": {"hidden": [16], "train": {"max_epochs": 2}},
  "scrf": {"train": {"epochs": 1, "step": 0.5, "adagrad": true, "log_objective": false}},
  "adaptation": {"fraction": 0.5, "train": {"max_epochs": 2, "learning_rate": 0.01, "valid_fraction": 0.0}},
  "hmm": {"iterations": 1},
  "cascade": {"segment_hidden": [8], "segment_train": {"max_epochs": 2}, "train": {"epochs": 1, "adagrad": true, "step": 0.2, "log_objective": false}}
}"#;

fn segspell(work: &Path, config: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_segspell"));
    cmd.arg("--work").arg(work).arg("--threads").arg("1");
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args).env_remove("SEGSPELL_SEED");
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.json");
    std::fs::write(&p, SMALL).unwrap();
    p
}

/// Every file under `root` except run records, by relative path.
fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                if !rel.starts_with("runs") {
                    out.insert(rel, std::fs::read(&p).unwrap());
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn score_of_identical_files_is_zero() {
    let dir = TempDir::new().unwrap();
    let refs = dir.path().join("refs.txt");
    std::fs::write(&refs, "HELLO\nWORLD\nZZ\n").unwrap();
    let out = segspell(
        dir.path(),
        None,
        &[
            "score",
            "--ref",
            refs.to_str().unwrap(),
            "--hyp",
            refs.to_str().unwrap(),
        ],
    );
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("LER 0.0%"));
    let report: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("score.json")).unwrap()).unwrap();
    assert_eq!(report["ler"].as_f64(), Some(0.0));
    let record: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("runs/score.json")).unwrap())
            .unwrap();
    assert_eq!(record["seed"].as_u64(), Some(1));
    assert_eq!(record["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn score_counts_errors_and_mismatched_lengths_fail() {
    let dir = TempDir::new().unwrap();
    let (r, h) = (dir.path().join("r.txt"), dir.path().join("h.txt"));
    std::fs::write(&r, "a\tABCD\nb\tXY\n").unwrap();
    std::fs::write(&h, "b\tXY\na\tABD\n").unwrap();
    let out = segspell(
        dir.path(),
        None,
        &[
            "score",
            "--ref",
            r.to_str().unwrap(),
            "--hyp",
            h.to_str().unwrap(),
        ],
    );
    ok(&out);
    // one deletion over six reference letters
    assert!(String::from_utf8_lossy(&out.stdout).contains("LER 16.7%"));
    std::fs::write(&h, "ABCD\n").unwrap();
    let out = segspell(
        dir.path(),
        None,
        &[
            "score",
            "--ref",
            r.to_str().unwrap(),
            "--hyp",
            h.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn decode_without_a_model_names_the_trainer() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let work = dir.path().join("w");
    for (model, producer) in [
        ("scrf", "train-scrf"),
        ("hmm", "train-hmm"),
        ("rescore", "train-scrf"),
    ] {
        let out = segspell(&work, Some(&cfg), &["decode", "--model", model]);
        assert_eq!(out.status.code(), Some(3));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(&format!("segspell {producer}")), "{err}");
    }
    let out = segspell(&work, Some(&cfg), &["train-classifier"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-data"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    for text in [
        r#"{"bogus": 1}"#,
        r#"{"data": {"signers": 2, "test_signer": 5}}"#,
        r#"{"adaptation": {"fraction": 1.5}}"#,
        r#"{"lm": {"lexicon": "/nonexistent/words.txt"}}"#,
        "not json",
    ] {
        std::fs::write(&bad, text).unwrap();
        let out = segspell(dir.path(), Some(&bad), &["train-lm"]);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{text}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = segspell(dir.path(), None, &["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_variable_overrides_the_config() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_segspell"))
        .arg("--work")
        .arg(dir.path())
        .arg("--config")
        .arg(&cfg)
        .arg("gen-data")
        .env("SEGSPELL_SEED", "17")
        .output()
        .unwrap();
    ok(&out);
    let m: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("corpus/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["seed"].as_u64(), Some(17));
    let out = Command::new(env!("CARGO_BIN_EXE_segspell"))
        .arg("--work")
        .arg(dir.path())
        .arg("gen-data")
        .env("SEGSPELL_SEED", "x")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

const PIPELINE: &[&[&str]] = &[
    &["gen-data", "--render", "1"],
    &["train-lm"],
    &["train-classifier"],
    &["train-scrf"],
    &["adapt", "--source", "fa"],
    &["adapt", "--source", "gt"],
    &["decode", "--adapted"],
    &["train-hmm"],
    &["align", "--model", "hmm"],
    &["nbest"],
    &["decode", "--model", "hmm"],
    &["cascade", "--adapted"],
    &["realign-adapt", "--iters", "2"],
];

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let works = [dir.path().join("a"), dir.path().join("b")];
    for work in &works {
        for args in PIPELINE {
            ok(&segspell(work, Some(&cfg), args));
        }
    }
    let (a, b) = (snapshot(&works[0]), snapshot(&works[1]));
    for name in [
        "corpus/manifest.json",
        "lm.arpa",
        "classifier.json",
        "classifier.curve.csv",
        "scrf.json",
        "classifier.adapted.json",
        "hmm.json",
        "alignments/hmm.jsonl",
        "cascade.json",
        "realign.json",
        "realign.txt",
        "decode/scrf.adapted.hyp.txt",
        "decode/hmm.hyp.txt",
        "decode/cascade.second.hyp.txt",
    ] {
        assert!(a.contains_key(name), "{name} not written");
    }
    assert!(a
        .keys()
        .any(|k| k.starts_with("corpus/frames/") && k.ends_with(".png")));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(v == &b[k], "{k} differs between runs");
    }

    let realign: Value = serde_json::from_slice(&a["realign.json"]).unwrap();
    assert_eq!(realign.as_array().unwrap().len(), 3);

    // decode's run record fingerprints its inputs; changing one changes it
    let record = |w: &Path| -> Value {
        serde_json::from_slice(&std::fs::read(w.join("runs/decode.json")).unwrap()).unwrap()
    };
    let before = record(&works[0]);
    let before_b = record(&works[1]);
    assert_eq!(before["inputs"], before_b["inputs"]);
    std::fs::write(
        works[0].join("lm.arpa"),
        [&a["lm.arpa"][..], b"\n"].concat(),
    )
    .unwrap();
    ok(&segspell(
        &works[0],
        Some(&cfg),
        &["decode", "--model", "hmm"],
    ));
    let after = record(&works[0]);
    assert_ne!(before["inputs"]["lm.arpa"], after["inputs"]["lm.arpa"]);
    assert_eq!(before["inputs"]["hmm.json"], after["inputs"]["hmm.json"]);
}

#[test]
fn rescoring_pipeline_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let rescore = dir.path().join("rescore.json");
    let mut v: Value = serde_json::from_str(SMALL).unwrap();
    v["scrf"]["mode"] = Value::from("rescore");
    std::fs::write(&rescore, v.to_string()).unwrap();
    let work = dir.path().join("w");
    for args in [
        &["gen-data"][..],
        &["train-lm"],
        &["train-classifier"],
        &["train-hmm"],
    ] {
        ok(&segspell(&work, Some(&cfg), args));
    }
    let out = segspell(&work, Some(&rescore), &["train-scrf"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("segspell nbest"));
    ok(&segspell(&work, Some(&cfg), &["nbest"]));
    ok(&segspell(&work, Some(&rescore), &["train-scrf"]));
    ok(&segspell(
        &work,
        Some(&rescore),
        &["decode", "--model", "rescore"],
    ));
    let hyp = std::fs::read_to_string(work.join("decode/rescore.hyp.txt")).unwrap();
    let refs = std::fs::read_to_string(work.join("decode/rescore.ref.txt")).unwrap();
    assert_eq!(hyp.lines().count(), refs.lines().count());
    assert!(hyp.lines().count() > 0);
}

#[test]
fn extract_features_on_rendered_frames() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let work = dir.path().join("w");
    ok(&segspell(&work, Some(&cfg), &["gen-data", "--render", "1"]));
    let frames = std::fs::read_dir(work.join("corpus/frames"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let id = frames.file_name().unwrap().to_owned();
    let masks = work.join("corpus/masks").join(&id);
    let n = std::fs::read_dir(&frames).unwrap().count();
    let (raw, out, pca) = (
        dir.path().join("hog.sgmx"),
        dir.path().join("x.sgmx"),
        dir.path().join("pca.json"),
    );
    let args = |extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = vec![
            "extract-features".into(),
            "--frames".into(),
            frames.display().to_string(),
            "--rois".into(),
            masks.display().to_string(),
        ];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let run = |extra: &[&str]| {
        let a = args(extra);
        segspell(
            &work,
            Some(&cfg),
            &a.iter().map(String::as_str).collect::<Vec<_>>(),
        )
    };
    ok(&run(&["--out", raw.to_str().unwrap()]));
    let header = |p: &Path| {
        let b = std::fs::read(p).unwrap();
        assert_eq!(&b[..4], b"SGMX");
        (
            u32::from_le_bytes(b[4..8].try_into().unwrap()) as usize,
            u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize,
        )
    };
    assert_eq!(header(&raw), (n, 2688));
    ok(&run(&[
        "--out",
        out.to_str().unwrap(),
        "--fit-pca",
        pca.to_str().unwrap(),
    ]));
    let model: Value = serde_json::from_slice(&std::fs::read(&pca).unwrap()).unwrap();
    assert_eq!(model["mean"].as_array().unwrap().len(), 2688);
    assert_eq!(model["basis"].as_array().unwrap().len(), 128.min(n - 1));
    let first = std::fs::read(&out).unwrap();
    ok(&run(&[
        "--out",
        out.to_str().unwrap(),
        "--pca",
        pca.to_str().unwrap(),
    ]));
    assert_eq!(first, std::fs::read(&out).unwrap());
    assert_eq!(header(&out), (n, 128.min(n - 1)));
}
