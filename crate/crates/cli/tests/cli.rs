use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use segxai::aggregate::ExplanationMatrix;
use segxai::container::{write_container, Container};
use segxai::volume::{ClassMask, Dims};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_segxai");

fn segxai(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = segxai(args);
    assert!(out.status.success(), "segxai {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(out.stderr.trim_ascii()).expect("stderr is one JSON object")
}

fn write_config(dir: &Path, model: serde_json::Value) -> PathBuf {
    let path = dir.join("config.json");
    let config = serde_json::json!({
        "model": model,
        "inputs": {"synthetic": {"count": 3, "seed": 5}},
        "class_names": ["aorta", "heart", "rib"],
        "metrics": {"faithfulness_n": 10, "sensitivity_n": 2},
        "seed": 11,
    });
    std::fs::write(&path, config.to_string()).unwrap();
    path
}

fn synthetic_model() -> serde_json::Value {
    serde_json::json!({"synthetic": {"dims": [5, 5, 5], "num_classes": 3, "seed": 3}})
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Relative path → contents of every file below `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

/// attribute → aggregate → outliers → benchmark into `out`.
fn pipeline(config: &Path, out: &Path) {
    let attr = out.join("attr");
    let agg = out.join("agg");
    ok(&["attribute", "--config", p(config), "--method", "sg", "--out", p(&attr), "--jobs", "3"]);
    ok(&["aggregate", p(&attr), "--config", p(config), "--out", p(&agg), "--graph", "--jobs", "2"]);
    let dice = out.join("dice.csv");
    let mut text = String::from("input_id,class,dice\n");
    for (i, id) in ["case000", "case001", "case002"].iter().enumerate() {
        for (j, class) in ["aorta", "heart", "rib"].iter().enumerate() {
            text.push_str(&format!("{id},{class},{}\n", 0.5 + 0.1 * i as f64 - 0.05 * j as f64));
        }
    }
    std::fs::write(&dice, text).unwrap();
    ok(&["outliers", "--config", p(config), "--train", p(&agg), "--eval", p(&agg), "--dice", p(&dice), "--out", p(&out.join("outliers"))]);
    ok(&["benchmark", "--config", p(config), "--method", "ig", "--out", p(&out.join("bench")), "--jobs", "2"]);
}

#[test]
fn rerun_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), synthetic_model());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&config, &a);
    pipeline(&config, &b);
    let timing_free = |files: BTreeMap<PathBuf, Vec<u8>>| -> BTreeMap<PathBuf, Vec<u8>> {
        files
            .into_iter()
            .filter(|(k, _)| {
                let name = k.file_name().unwrap().to_str().unwrap();
                // wall-clock columns
                !matches!(name, "timings.json" | "methods.csv" | "summary.json")
            })
            .collect()
    };
    let (sa, sb) = (timing_free(snapshot(&a)), timing_free(snapshot(&b)));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{} differs between runs", k.display());
    }
    for expected in ["attr/manifest.json", "agg/global.csv", "agg/graph.dot", "outliers/rank_tests.csv", "bench/records.csv"] {
        assert!(sa.contains_key(Path::new(expected)), "missing {expected}");
    }
    let rank = String::from_utf8(sa[Path::new("outliers/rank_tests.csv")].clone()).unwrap();
    assert!(rank.starts_with("Label,p-value,Spearman Correlation\n"));
    assert!(rank.lines().any(|l| l.starts_with("average,")));
}

#[test]
fn offline_remote_model_is_a_transport_error() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), serde_json::json!({"remote": "127.0.0.1:1"}));
    let out = segxai(&["attribute", "--config", p(&config), "--method", "vg", "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "transport");
    let out = segxai(&["probe", "--endpoint", "127.0.0.1:1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "transport");
}

#[test]
fn config_errors_exit_1() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), synthetic_model());
    let out = segxai(&["attribute", "--config", p(&config), "--method", "nonsense", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "config");
    let out = segxai(&["attribute", "--config", p(&tmp.path().join("missing.json")), "--method", "vg"]);
    assert_eq!(out.status.code(), Some(1));
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"unknown_key": 1}"#).unwrap();
    let out = segxai(&["benchmark", "--config", p(&bad), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
}

fn write_mask(path: &Path, dims: Dims, f: impl Fn(usize) -> bool) {
    let mask = ClassMask::from_bools(dims, (0..dims.len()).map(f)).unwrap();
    write_container(&Container::new(mask), path).unwrap();
}

#[test]
fn extra_roi_adds_a_column_and_mismatched_labels_exit_3() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), synthetic_model());
    let attr = tmp.path().join("attr");
    ok(&["attribute", "--config", p(&config), "--method", "vg", "--out", p(&attr)]);
    for id in ["case000", "case001", "case002"] {
        write_mask(&tmp.path().join(format!("lesion_{id}.a2x")), Dims::cube(5), |i| i % 7 == 0);
    }
    let plain = tmp.path().join("plain");
    let extra = tmp.path().join("extra");
    ok(&["aggregate", p(&attr), "--out", p(&plain), "--config", p(&config)]);
    let roi = format!("lesion={}", p(&tmp.path().join("lesion_{input}.a2x")));
    ok(&["aggregate", p(&attr), "--out", p(&extra), "--config", p(&config), "--roi", &roi]);

    let read = |path: PathBuf| ExplanationMatrix::from_json(&std::fs::read_to_string(path).unwrap()).unwrap();
    let (a, b) = (read(plain.join("global.json")), read(extra.join("global.json")));
    assert_eq!(b.col_labels.len(), a.col_labels.len() + 1);
    assert_eq!(b.col_labels.last().unwrap(), "lesion");
    assert_eq!(a.row_labels, b.row_labels);
    let header = std::fs::read_to_string(extra.join("global.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), "class,aorta,heart,rib,lesion");

    let out = segxai(&["outliers", "--train", p(&plain), "--eval", p(&extra), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "data");
}

#[test]
fn graph_in_degree_is_at_most_k() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), synthetic_model());
    let attr = tmp.path().join("attr");
    ok(&["attribute", "--config", p(&config), "--method", "ig", "--out", p(&attr)]);
    for k in 1..=3 {
        let agg = tmp.path().join(format!("agg{k}"));
        ok(&["aggregate", p(&attr), "--out", p(&agg), "--graph", "--k", &k.to_string()]);
        let graph: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(agg.join("graph.json")).unwrap()).unwrap();
        let mut indeg: BTreeMap<String, usize> = BTreeMap::new();
        for e in graph["edges"].as_array().unwrap() {
            *indeg.entry(e["to"].as_str().unwrap().to_owned()).or_default() += 1;
        }
        assert!(indeg.values().all(|&d| d <= k), "k={k}: {indeg:?}");
        let dot = std::fs::read_to_string(agg.join("graph.dot")).unwrap();
        assert!(dot.contains("[group=\""));
    }
}

struct Server(Child, String);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve(config: &Path) -> Server {
    let mut child = Command::new(BIN)
        .args(["serve", "--config", p(config)])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("serve announces its address").to_owned();
    Server(child, addr)
}

#[test]
fn probe_reports_served_model() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), synthetic_model());
    let server = serve(&config);
    let out = ok(&["probe", "--endpoint", &server.1]);
    let info: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(info["num_classes"], 3);
    assert_eq!(info["dims"], serde_json::json!([5, 5, 5]));
    assert_eq!(info["has_gradient"], true);
}

#[test]
fn remote_attribution_matches_local() {
    let tmp = TempDir::new().unwrap();
    let local_cfg = write_config(tmp.path(), synthetic_model());
    let server = serve(&local_cfg);
    let remote_dir = tmp.path().join("remote");
    std::fs::create_dir(&remote_dir).unwrap();
    let remote_cfg = write_config(&remote_dir, serde_json::json!({"remote": server.1}));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["attribute", "--config", p(&local_cfg), "--method", "ig", "--out", p(&a)]);
    ok(&["attribute", "--config", p(&remote_cfg), "--method", "ig", "--out", p(&b)]);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    for (k, v) in sa.iter().filter(|(k, _)| k.extension().is_some_and(|e| e == "a2x")) {
        // logits travel as f32, so gradients agree to f32 precision
        let fa = Container::from_bytes(v).unwrap();
        let fb = Container::from_bytes(&sb[k]).unwrap();
        let (va, vb) = match (fa.into_volume(), fb.into_volume()) {
            (Ok(va), Ok(vb)) => (va.to_f64(), vb.to_f64()),
            _ => continue,
        };
        let scale = va.iter().fold(1e-12f64, |m, x| m.max(x.abs()));
        for (x, y) in va.iter().zip(&vb) {
            assert!((x - y).abs() <= 1e-4 * scale, "{}: {x} vs {y}", k.display());
        }
    }
}
