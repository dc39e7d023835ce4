use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
  "n_scenes": 4,
  "scenes": {"n_cameras": 2, "height": 16, "width": 16, "n_classes": 3, "max_objects": 2,
             "min_radius": 0.15, "max_radius": 0.25},
  "model": {"n_cameras": 2, "n_layers": 2, "n_heads": 2, "n_queries": 4, "d_model": 8,
            "ffn_hidden": 8, "grid": [2, 2], "patch": 8, "n_classes": 3, "threshold": 0.3},
  "train": {"steps": 15, "batch_size": 2, "warmup_steps": 3}
}"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.json"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn xattn(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_xattn"))
            .arg("--config")
            .arg(self.path("run.json"))
            .args(args)
            .env("XATTN_LOG", "error")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.xattn(args);
        assert!(
            out.status.success(),
            "xattn {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn with_model(&self) -> &Self {
        let data = self.path("data");
        let weights = self.path("weights");
        self.ok(&["gen-data", "--out", data.to_str().unwrap()]);
        self.ok(&["train", "--dataset", data.to_str().unwrap(), "--out", weights.to_str().unwrap()]);
        self
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "config.echo.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn gen_data_writes_manifest_and_echo() {
    let ws = Workspace::new();
    let data = ws.path("data");
    ws.ok(&["gen-data", "--out", s(&data), "--seed", "3"]);
    assert!(data.join("manifest.json").exists());
    assert_eq!(fs::read_dir(&data).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "atns")
    }).count(), 8);
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("config.echo.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 3);
    assert_eq!(echo["model"]["n_layers"], 2);
}

#[test]
fn training_twice_gives_identical_weights() {
    let ws = Workspace::new();
    let data = ws.path("data");
    ws.ok(&["gen-data", "--out", s(&data)]);
    for run in ["w1", "w2"] {
        ws.ok(&["train", "--seed", "1", "--dataset", s(&data), "--out", s(&ws.path(run))]);
    }
    assert_eq!(dir_files(&ws.path("w1")), dir_files(&ws.path("w2")));
    assert!(ws.path("w1").join("config.echo.json").exists());
}

#[test]
fn infer_saliency_perturb_and_sanity() {
    let ws = Workspace::new();
    ws.with_model();
    let (data, weights) = (ws.path("data"), ws.path("weights"));
    let common = ["--dataset", s(&data), "--weights", s(&weights)];

    let stdout = ws.ok(&[&["infer", "--scene", "S1"][..], &common].concat());
    let dets: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(dets[0]["scene_id"], "S1");
    assert_eq!(dets[0]["detections"].as_array().unwrap().len(), 4);

    let sal = ws.path("sal");
    ws.ok(&[
        &["saliency", "--method", "grad-rollout", "--scene", "S0", "--query", "1", "--out", s(&sal)][..],
        &common,
    ]
    .concat());
    for f in ["cam0.atns", "cam1.atns", "saliency.json", "config.echo.json"] {
        assert!(sal.join(f).exists(), "missing {f}");
    }

    let rep = ws.path("report");
    ws.ok(&[
        &["perturb", "--method", "raw-max", "--mode", "positive", "--fractions", "0,0.5,1", "--out", s(&rep)][..],
        &common,
    ]
    .concat());
    let csv = fs::read_to_string(rep.join("raw-max_positive.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(csv.lines().next(), Some("fraction,score"));
    assert!(rep.join("summary.csv").exists() && rep.join("config.echo.json").exists());

    let san = ws.path("sanity");
    ws.ok(&[&["sanity", "--method", "raw-mean", "--out", s(&san)][..], &common].concat());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(san.join("sanity.json")).unwrap()).unwrap();
    assert_eq!(report[0]["method"], "raw-mean");
}

#[test]
fn unknown_method_is_a_usage_error_listing_valid_values() {
    let ws = Workspace::new();
    let out = ws.xattn(&["perturb", "--method", "gradcam", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for m in ["raw-last", "raw-mean", "raw-max", "grad-cam", "grad-rollout", "random"] {
        assert!(err.contains(m), "{err}");
    }
    let out = ws.xattn(&["perturb", "--method", "raw-max", "--mode", "sideways", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("positive, negative"));
}

#[test]
fn failures_print_one_machine_readable_line() {
    let ws = Workspace::new();
    let out = ws.xattn(&["infer", "--dataset", s(&ws.path("nowhere")), "--weights", s(&ws.path("nothing"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: missing-file: "), "{err}");

    let out = ws.xattn(&["gen-data"]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: invalid-params: "), "{err}");
    assert!(err.contains("--out is required"), "{err}");
}
