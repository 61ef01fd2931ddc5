use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use partcrop::image::Image;
use serde_json::{json, Value};

fn partcrop(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_partcrop"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, cfg: &Value) -> String {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn image_dir(root: &Path) -> String {
    let dir = root.join("images");
    fs::create_dir_all(&dir).unwrap();
    Image::procedural(40, 48, 1).unwrap().save_png(dir.join("a.png")).unwrap();
    Image::procedural(36, 36, 2).unwrap().save_png(dir.join("b.png")).unwrap();
    fs::write(dir.join("notes.txt"), "ignored").unwrap();
    dir.to_str().unwrap().to_string()
}

fn small_synthetic(kind: &str) -> Value {
    json!({
        "dataset": {"synthetic": {"members": 12, "nonmembers": 12, "image_size": 16}},
        "crops": {"m": 4},
        "encoder": {"synthetic": {"dim": 16, "map_rows": 8}},
        "features": {"kind": kind, "views": 10},
        "train": {"epochs": 3, "batch": 8},
        "eval": {"seeds": [1]}
    })
}

#[test]
fn crops_writes_m_files_per_image() {
    let tmp = tempfile::tempdir().unwrap();
    let images = image_dir(tmp.path());
    let cfg = write_config(tmp.path(), &json!({"crops": {"m": 4}}));
    let out = tmp.path().join("out");
    let o = partcrop(&["crops", &images, "--config", &cfg], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    for id in ["a", "b"] {
        let files: Vec<_> = fs::read_dir(out.join(id)).unwrap().collect();
        assert_eq!(files.len(), 4);
        let t = partcrop::read_tensor(out.join(id).join("crop_0000.pctf")).unwrap();
        assert_eq!(t.shape(), [16, 16, 3]);
    }
    let listing: Value = serde_json::from_str(&fs::read_to_string(out.join("crops.json")).unwrap()).unwrap();
    assert_eq!(listing["images"].as_array().unwrap().len(), 2);
    assert_eq!(listing["images"][0]["windows"].as_array().unwrap().len(), 4);
}

#[test]
fn crops_are_byte_identical_on_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let images = image_dir(tmp.path());
    let (o1, o2) = (tmp.path().join("o1"), tmp.path().join("o2"));
    assert!(partcrop(&["crops", &images, "--seed", "5"], &o1).status.success());
    assert!(partcrop(&["crops", &images, "--seed", "5"], &o2).status.success());
    for name in ["a/crop_0000.pctf", "b/crop_0009.pctf"] {
        assert_eq!(fs::read(o1.join(name)).unwrap(), fs::read(o2.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn missing_image_directory_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere");
    let o = partcrop(&["crops", missing.to_str().unwrap()], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));
}

#[test]
fn invalid_config_exits_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &json!({"crops": {"m": 0}}));
    let o = partcrop(&["attack", "--config", &cfg], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("crops.m"), "{}", stderr(&o));
}

#[test]
fn unknown_config_field_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &json!({"crops": {"count": 4}}));
    let o = partcrop(&["attack", "--config", &cfg], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_preset_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = partcrop(&["synth-bench", "gap9"], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gap03"), "{}", stderr(&o));
}

#[test]
fn encodermi_attack_reports_pairwise_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_synthetic("encodermi"));
    let out = tmp.path().join("out");
    let o = partcrop(&["attack", "--config", &cfg], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["feature_kind"], "encodermi");
    assert_eq!(report["groups"][0]["feature_dim"], 45);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("axis_value,repeat_seed,acc,pre,rec,f1,tp,fp,tn,fn\n"));
    assert_eq!(csv.lines().count(), 2);
    assert!(out.join("attacker_seed1").is_dir());
    assert!(out.join("config.json").is_file());
}

#[test]
fn features_train_eval_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_synthetic("partcrop"));
    let [train_f, eval_f, att, met] = ["train_f", "eval_f", "att", "met"].map(|d| tmp.path().join(d));
    let s = |p: &Path| p.to_str().unwrap().to_string();
    assert!(partcrop(&["features", "--split", "train", "--config", &cfg], &train_f).status.success());
    assert!(partcrop(&["features", "--split", "eval", "--config", &cfg], &eval_f).status.success());
    let o = partcrop(&["train", "--features", &s(&train_f), "--config", &cfg], &att);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(att.join("history.csv").is_file());
    let o = partcrop(&["eval", "--attacker", &s(&att), "--features", &s(&eval_f), "--config", &cfg], &met);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: Value = serde_json::from_str(&fs::read_to_string(met.join("metrics.json")).unwrap()).unwrap();
    let total = ["tp", "fp", "tn", "fn"].iter().map(|k| m[k].as_u64().unwrap()).sum::<u64>();
    assert_eq!(total, 12);
    let acc = m["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn sweep_without_axis_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_synthetic("partcrop"));
    let o = partcrop(&["sweep", "--config", &cfg], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sweep.axis"), "{}", stderr(&o));
}
