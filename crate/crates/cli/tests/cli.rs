use std::path::Path;

use assert_cmd::Command;
use serde_json::Value;

const SMALL: &[&str] = &["--set", "image_size=32", "--set", "epochs=1", "--set", "batch_size=4", "--set", "feature_dim=8", "--set", "base_width=4"];

fn dawsol() -> Command {
    Command::cargo_bin("dawsol").unwrap()
}

fn stdout_json(cmd: &mut Command) -> Value {
    let out = cmd.assert().success().get_output().stdout.clone();
    serde_json::from_slice(&out).unwrap()
}

fn generate(dir: &Path) {
    dawsol()
        .args(["generate-synthetic", "--out"])
        .arg(dir)
        .args(["--seed", "4", "--set", "train_images=12", "--set", "test_images=5", "--set", "image_size=32"])
        .assert()
        .success();
}

fn trained(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    generate(&data);
    let run = dir.join("run");
    let v = stdout_json(dawsol().args(["train", "--data"]).arg(&data).arg("--out").arg(&run).args(SMALL));
    assert_eq!(v["steps"], 3);
    run.join("checkpoint.json")
}

#[test]
fn generate_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    generate(&tmp.path().join("a"));
    generate(&tmp.path().join("b"));
    for rel in ["train/labels.csv", "test/boxes.csv", "test/images/00003.png"] {
        assert_eq!(
            std::fs::read(tmp.path().join("a").join(rel)).unwrap(),
            std::fs::read(tmp.path().join("b").join(rel)).unwrap()
        );
    }
}

#[test]
fn train_evaluate_visualize_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = trained(tmp.path());
    let data = tmp.path().join("data");

    let log = std::fs::read_to_string(tmp.path().join("run/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        let r: Value = serde_json::from_str(line).unwrap();
        assert!(r["total"].as_f64().unwrap().is_finite());
    }

    let s = stdout_json(dawsol().args(["evaluate", "--checkpoint"]).arg(&ck).arg("--data").arg(&data));
    assert_eq!(s["num_images"], 5);
    for key in ["pxap", "piou", "box_acc_v2", "top1_loc", "gt_known"] {
        assert!(s[key].is_number(), "{key}");
    }
    let again = stdout_json(dawsol().args(["evaluate", "--checkpoint"]).arg(&ck).arg("--data").arg(&data));
    assert_eq!(s, again);

    let viz = tmp.path().join("viz");
    let v = stdout_json(
        dawsol()
            .args(["visualize", "--checkpoint"])
            .arg(&ck)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&viz)
            .args(["--limit", "3"]),
    );
    assert_eq!(v["files"].as_array().unwrap().len(), 3);
    for id in ["00000", "00001", "00002"] {
        let p = viz.join(format!("{id}_overlay.png"));
        let im = dawsol::data::read_rgb(&p).unwrap();
        assert_eq!(im.dimensions(), (32, 32));
    }

    let out = dawsol().args(["dump-cache", "--checkpoint"]).arg(&ck).assert().success().get_output().stdout.clone();
    let csv = String::from_utf8(out).unwrap();
    assert!(csv.starts_with("column,role,count"));
    assert_eq!(csv.lines().count(), 1 + 4);
}

#[test]
fn ablate_writes_five_rows_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    let mut csvs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = tmp.path().join(name);
        let v = stdout_json(dawsol().args(["ablate", "--data"]).arg(&data).arg("--out").arg(&out).args(SMALL));
        assert_eq!(v["rows"].as_array().unwrap().len(), 5);
        csvs.push(std::fs::read_to_string(out).unwrap());
    }
    assert_eq!(csvs[0].lines().count(), 6);
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn config_file_seed_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    let cfg = tmp.path().join("c.cfg");
    std::fs::write(&cfg, "image_size = 32\nfeature_dim = 8\nbase_width = 4\nepochs = 1\nbatch_size = 6\n").unwrap();
    let run = tmp.path().join("run");
    let v = stdout_json(
        dawsol()
            .args(["train", "--data"])
            .arg(&data)
            .arg("--out")
            .arg(&run)
            .arg("--config")
            .arg(&cfg)
            .args(["--seed", "3", "--set", "lambda2=0.5"]),
    );
    assert_eq!(v["steps"], 2);
    let saved = std::fs::read_to_string(run.join("config.cfg")).unwrap();
    assert!(saved.contains("seed = 3") && saved.contains("lambda2 = 0.5"), "{saved}");
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);

    let out = dawsol()
        .args(["train", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("x"))
        .args(["--set", "colour=red"])
        .assert()
        .code(3)
        .get_output()
        .stderr
        .clone();
    assert!(String::from_utf8(out).unwrap().contains("colour"));

    dawsol().arg("frobnicate").assert().code(2);
    dawsol().args(["train", "--bogus-flag"]).assert().code(2);

    dawsol()
        .args(["evaluate", "--checkpoint"])
        .arg(tmp.path().join("missing.json"))
        .arg("--data")
        .arg(&data)
        .assert()
        .failure();

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    dawsol().args(["dump-cache", "--checkpoint"]).arg(&bad).assert().code(6);

    // the labels-only split cannot be scored
    let ck = trained(&tmp.path().join("t"));
    dawsol()
        .args(["evaluate", "--checkpoint"])
        .arg(&ck)
        .arg("--data")
        .arg(tmp.path().join("t/data"))
        .args(["--split", "train"])
        .assert()
        .code(5);

    dawsol()
        .args(["train", "--data"])
        .arg(tmp.path().join("nowhere"))
        .arg("--out")
        .arg(tmp.path().join("y"))
        .assert()
        .code(5);
}

#[test]
fn help_lists_subcommands() {
    let out = dawsol().arg("--help").assert().success().get_output().stdout.clone();
    let text = String::from_utf8(out).unwrap();
    for sub in ["generate-synthetic", "train", "evaluate", "visualize", "ablate", "dump-cache"] {
        assert!(text.contains(sub), "{sub}");
    }
}
