use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nvq_cli::manifest::{sha256_hex, Manifest, MANIFEST, TOOL, VERSION};
use nvq_cli::EvalFile;
use nvq_core::evalkit::Category;

const TINY: &str = r#"{
  "seed": 3,
  "world": {"n_scenes": 120, "questions_per_scene": 4},
  "model": {"d_e": 6, "d_h": 8, "d": 12},
  "ae": {"epochs": 1},
  "vqa": {"epochs": 2},
  "pairs": {"m": 3, "n": 3}
}"#;

fn nvq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvq"))
        .args(args)
        .arg("--out-dir")
        .arg(dir.join("out"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = nvq(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    nvq(dir, args).status.code().unwrap()
}

fn setup(config: &str) -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, config).unwrap();
    let p = path.to_string_lossy().into_owned();
    (dir, p)
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn split_twice_is_byte_identical() {
    let (dir, c) = setup(TINY);
    ok(dir.path(), &["genworld", "--config", &c]);
    ok(dir.path(), &["split", "--config", &c]);
    let first = tree(&dir.path().join("out/split"));
    ok(dir.path(), &["split", "--config", &c]);
    assert_eq!(first, tree(&dir.path().join("out/split")));
    assert!(first.contains_key(Path::new("spec.json")));

    let world = tree(&dir.path().join("out/world"));
    ok(dir.path(), &["genworld", "--config", &c]);
    assert_eq!(world, tree(&dir.path().join("out/world")));
}

#[test]
fn train_then_eval_reports_every_category() {
    let (dir, c) = setup(TINY);
    for cmd in ["genworld", "split", "expand-vocab", "pretrain-ae", "train", "eval"] {
        ok(dir.path(), &[cmd, "--config", &c, "--arch", "1", "--setting", "oracle", "--aux", "text"]);
    }
    let eval_dir = dir.path().join("out/eval/arch1-A-text-oracle");
    let file: EvalFile = serde_json::from_slice(&fs::read(eval_dir.join("result.json")).unwrap()).unwrap();
    for r in [&file.known_test, &file.test, &file.novel_only] {
        for e in [&r.oeq, &r.mcq] {
            for cat in Category::ALL {
                assert!(e.categories.contains_key(&cat), "{cat:?}");
            }
        }
    }
    assert_eq!(file.provenance.seed, 3);
    assert_eq!(file.cell.arch, 1);
    let raw: serde_json::Value = serde_json::from_slice(&fs::read(eval_dir.join("result.json")).unwrap()).unwrap();
    let cats = raw["test"]["oeq"]["categories"].as_object().unwrap();
    assert_eq!(cats.len(), 5);
    assert!(cats.contains_key("Yes/No"));
    let preds = fs::read_to_string(eval_dir.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count() as u64, file.test.oeq.categories[&Category::Overall].count);

    let out = nvq(dir.path(), &["report", "--config", &c]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("| 1 | A | text | oracle |"), "{text}");
    assert!(text.contains("arch1-A-text-oracle | OEQ | Overall"));
}

#[test]
fn every_artifact_directory_has_a_valid_manifest() {
    let (dir, c) = setup(TINY);
    for cmd in ["genworld", "split", "expand-vocab", "gen-pairs", "pretrain-ae", "train", "eval", "report"] {
        ok(dir.path(), &[cmd, "--config", &c, "--aux", "text+im", "--feat", "LF"]);
    }
    let out = dir.path().join("out");
    let dirs = [
        "world",
        "split",
        "vocab/oracle",
        "pairs/oracle",
        "ae/multimodal-a1-oracle",
        "models/arch1-LF-text+im-oracle",
        "eval/arch1-LF-text+im-oracle",
        "report",
    ];
    let mut hashes = Vec::new();
    for d in dirs {
        let d = out.join(d);
        let m: Manifest = serde_json::from_slice(&fs::read(d.join(MANIFEST)).unwrap()).unwrap();
        assert_eq!((m.tool.as_str(), m.version.as_str(), m.seed), (TOOL, VERSION, 3));
        hashes.push(m.config_hash.clone());
        let files = tree(&d);
        assert_eq!(files.len(), m.files.len() + 1, "{}", d.display());
        for (rel, h) in &m.files {
            assert_eq!(&sha256_hex(&files[Path::new(rel)]), h, "{rel}");
        }
    }
    assert!(hashes.windows(2).all(|w| w[0] == w[1]));
    assert!(out.join("models/arch1-LF-text+im-oracle/model_1/manifest.json").is_file());
}

#[test]
fn configuration_errors_exit_with_two() {
    let (dir, c) = setup(TINY);
    let p = dir.path();
    let bad = p.join("bad.json");
    fs::write(&bad, r#"{"seed": 1, "world": {"n_scenes": 10, "typo": 1}}"#).unwrap();
    assert_eq!(code(p, &["genworld", "--config", bad.to_str().unwrap()]), 2);
    fs::write(&bad, r#"{"arch": 1}"#).unwrap();
    assert_eq!(code(p, &["genworld", "--config", bad.to_str().unwrap()]), 2);
    fs::write(&bad, "{not json").unwrap();
    assert_eq!(code(p, &["genworld", "--config", bad.to_str().unwrap()]), 2);
    assert_eq!(code(p, &["genworld"]), 2);
    assert_eq!(code(p, &["genworld", "--config", &c, "--arch", "3"]), 2);
    assert_eq!(code(p, &["genworld", "--config", &c, "--setting", "gen-expanded"]), 2);
    assert_eq!(code(p, &["pretrain-ae", "--config", &c]), 2);
    assert_eq!(code(p, &["frobnicate", "--config", &c]), 2);
}

#[test]
fn data_errors_exit_with_one() {
    let (dir, c) = setup(TINY);
    let p = dir.path();
    assert_eq!(code(p, &["split", "--config", &c]), 1);
    ok(p, &["genworld", "--config", &c]);
    assert_eq!(code(p, &["split", "--config", &c, "--seed", "4"]), 1);
    ok(p, &["split", "--config", &c]);
    assert_eq!(code(p, &["train", "--config", &c]), 1);
    assert_eq!(code(p, &["report", "--config", &c]), 1);
}

#[test]
fn seed_flag_overrides_the_config() {
    let (dir, c) = setup(TINY);
    ok(dir.path(), &["genworld", "--config", &c, "--seed", "11"]);
    let m: Manifest = serde_json::from_slice(&fs::read(dir.path().join("out/world").join(MANIFEST)).unwrap()).unwrap();
    assert_eq!(m.seed, 11);
    let a = fs::read(dir.path().join("out/world/dataset.jsonl")).unwrap();
    ok(dir.path(), &["genworld", "--seed", "11", "--config", &c]);
    assert_eq!(a, fs::read(dir.path().join("out/world/dataset.jsonl")).unwrap());
    ok(dir.path(), &["genworld", "--config", &c]);
    assert_ne!(a, fs::read(dir.path().join("out/world/dataset.jsonl")).unwrap());
}
