use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lineseg_core::components::BoundingBox;
use lineseg_core::dataio::{read_yolo, write_voc, LineAnnotation};
use lineseg_core::raster::RasterImage;
use lineseg_core::synth::{generate_page, SynthOptions};
use serde_json::Value;

fn lineseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lineseg"))
        .args(args)
        .env_remove("LINESEG_CONFIG")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_synth(path: &Path, seed: u64, lines: usize) {
    let page = generate_page(
        seed,
        &SynthOptions {
            lines,
            ..SynthOptions::default()
        },
    );
    page.image.to_gray_image().save(path).unwrap();
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn without_timings(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timings");
    v
}

fn bx(x0: usize, y0: usize, x1: usize, y1: usize) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

#[test]
fn segment_five_row_page() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("4_9.png");
    write_synth(&img, 5, 5);
    let out = tmp.path().join("out");
    let o = lineseg(&["segment", s(&img), "-o", s(&out), "--debug-dumps"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = out.join("4").join("9");
    for n in 1..=5 {
        assert!(dir.join(format!("lines/4_9_{n}.png")).is_file());
    }
    assert!(!dir.join("lines/4_9_6.png").exists());
    let ann = read_yolo(&dir.join("4_9.txt"), 1, 1).unwrap();
    assert_eq!(ann.boxes.len(), 5);
    let m = json(&dir.join("manifest.json"));
    assert_eq!(m["line_count"], 5);
    assert_eq!(m["config"]["eval"]["t_a"], 0.8);
    assert_eq!(m["debug_stages"].as_array().unwrap().len(), 11);
    assert!(dir.join("debug/01_gray.png").is_file());

    let again = lineseg(&["segment", s(&img), "-o", s(&out)]);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("already exists"));
}

#[test]
fn blank_page_succeeds_with_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("blank.png");
    RasterImage::filled(400, 300, 250).to_gray_image().save(&img).unwrap();
    let out = tmp.path().join("out");
    let o = lineseg(&["segment", s(&img), "-o", s(&out)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no text lines"));
    let dir = out.join("blank");
    assert_eq!(fs::read_to_string(dir.join("blank.txt")).unwrap(), "");
    assert!(!dir.join("lines").exists());
    assert_eq!(json(&dir.join("manifest.json"))["line_count"], 0);
}

#[test]
fn repeated_runs_match_except_timings() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("page.png");
    write_synth(&img, 21, 4);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(lineseg(&["segment", s(&img), "-o", s(&a)]).status.success());
    assert!(lineseg(&["segment", s(&img), "-o", s(&b)]).status.success());
    let ma = without_timings(json(&a.join("page/manifest.json")));
    let mb = without_timings(json(&b.join("page/manifest.json")));
    assert_eq!(ma, mb);
    for f in ["page.txt", "page.xml", "lines/page_1.png", "lines/page_4.png"] {
        assert_eq!(
            fs::read(a.join("page").join(f)).unwrap(),
            fs::read(b.join("page").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn unreadable_input_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("1_1.png");
    fs::write(&img, b"garbage").unwrap();
    assert!(!lineseg(&["segment", s(&img), "-o", s(tmp.path())]).status.success());
    let missing = tmp.path().join("missing.png");
    assert!(!lineseg(&["segment", s(&missing), "-o", s(tmp.path())]).status.success());
}

#[test]
fn config_file_and_env_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[eval]\nt_a = 0.6\n").unwrap();
    let o = lineseg(&["config", "--config", s(&cfg)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("t_a = 0.6"));
    let o = Command::new(env!("CARGO_BIN_EXE_lineseg"))
        .arg("config")
        .env("LINESEG_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&o.stdout).contains("t_a = 0.6"));
    fs::write(&cfg, "[eval]\nt_a = 2\n").unwrap();
    assert!(!lineseg(&["config", "--config", s(&cfg)]).status.success());
}

fn batch_tree(root: &Path, corrupt: usize) {
    for (i, (f, p)) in [(1, 1), (1, 2), (2, 1)].into_iter().enumerate() {
        let dir = root.join(f.to_string());
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("{f}_{p}.png"));
        if i < corrupt {
            fs::write(&path, b"broken").unwrap();
        } else {
            write_synth(&path, 100 + i as u64, 2 + i);
        }
    }
}

#[test]
fn batch_writes_page_and_aggregate_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("data");
    batch_tree(&root, 0);
    let out = tmp.path().join("out");
    let o = lineseg(&["batch", s(&root), "-o", s(&out), "--jobs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for p in ["1/1", "1/2", "2/1"] {
        assert!(out.join(p).join("manifest.json").is_file(), "{p}");
    }
    let m = json(&out.join("batch_manifest.json"));
    assert_eq!(m["succeeded"], 3);
    let counts: Vec<u64> = m["pages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["line_count"].as_u64().unwrap())
        .collect();
    assert_eq!(counts, vec![2, 3, 4]);
}

#[test]
fn batch_continues_past_corrupt_image() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("data");
    batch_tree(&root, 1);
    let out = tmp.path().join("out");
    assert!(lineseg(&["batch", s(&root), "-o", s(&out)]).status.success());
    let m = json(&out.join("batch_manifest.json"));
    assert_eq!((m["succeeded"].as_u64(), m["failed"].as_u64()), (Some(2), Some(1)));
    assert_eq!(m["failures"][0]["page"], "1_1");

    let all_bad = tmp.path().join("bad");
    batch_tree(&all_bad, 3);
    assert!(!lineseg(&["batch", s(&all_bad), "-o", s(&tmp.path().join("o2"))])
        .status
        .success());
}

fn write_ann(dir: &Path, id: &str, w: usize, h: usize, boxes: Vec<BoundingBox>) {
    fs::create_dir_all(dir).unwrap();
    write_voc(
        &LineAnnotation::new(w, h, boxes).unwrap(),
        &dir.join(format!("{id}.xml")),
    )
    .unwrap();
}

fn evaluate(gt: &Path, det: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["evaluate", "--gt", s(gt), "--det", s(det), "--out", s(out)];
    args.extend_from_slice(extra);
    lineseg(&args)
}

#[test]
fn evaluate_identical_dirs_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = tmp.path().join("gt");
    write_ann(&gt, "1_1", 200, 100, vec![bx(0, 0, 99, 9), bx(0, 30, 150, 44)]);
    write_ann(&gt, "1_2", 200, 100, vec![bx(5, 5, 50, 20)]);
    let det = tmp.path().join("det");
    fs::create_dir_all(&det).unwrap();
    for f in ["1_1.xml", "1_2.xml"] {
        fs::copy(gt.join(f), det.join(f)).unwrap();
    }
    let report = tmp.path().join("r.json");
    let pr = tmp.path().join("pr.csv");
    let o = evaluate(&gt, &det, &report, &["--pr-curve", s(&pr)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&report);
    assert_eq!(r["aggregate"]["FM"], 1.0);
    assert_eq!(r["aggregate"]["AP"], 1.0);
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed, r);
    assert_eq!(fs::read_to_string(&pr).unwrap().lines().count(), 12);
}

#[test]
fn evaluate_without_shared_ids_fails() {
    let tmp = tempfile::tempdir().unwrap();
    write_ann(&tmp.path().join("gt"), "1_1", 10, 10, vec![bx(0, 0, 5, 5)]);
    write_ann(&tmp.path().join("det"), "2_1", 10, 10, vec![bx(0, 0, 5, 5)]);
    let o = evaluate(
        &tmp.path().join("gt"),
        &tmp.path().join("det"),
        &tmp.path().join("r.json"),
        &[],
    );
    assert!(!o.status.success());
}

/// Two images worked by hand: image 1_1 has one exact match and one half
/// overlap (IoU 0.5, below 0.8); image 1_2 has one line and no detections.
/// N = 3, M = 2, o2o = 1, so DR = 1/3, RA = 1/2, FM = 0.4. Per-image
/// (recall, precision) samples are (0.5, 0.5) and (0, 0); the 11-point curve
/// is 0 at recall 0, 0.5 at 0.1 through 0.5, and 0 above, so AP = 2.5 / 11.
#[test]
fn evaluate_hand_worked_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let (gt, det) = (tmp.path().join("gt"), tmp.path().join("det"));
    write_ann(&gt, "1_1", 200, 100, vec![bx(0, 0, 99, 9), bx(0, 20, 99, 29)]);
    write_ann(&gt, "1_2", 200, 100, vec![bx(0, 50, 99, 59)]);
    write_ann(&det, "1_1", 200, 100, vec![bx(0, 0, 99, 9), bx(0, 20, 49, 29)]);
    write_ann(&det, "1_2", 200, 100, vec![]);
    let report = tmp.path().join("r.json");
    assert!(evaluate(&gt, &det, &report, &[]).status.success());
    let r = json(&report);
    let a = &r["aggregate"];
    assert_eq!(
        (a["N"].as_u64(), a["M"].as_u64(), a["o2o"].as_u64()),
        (Some(3), Some(2), Some(1))
    );
    let close = |v: &Value, x: f64| (v.as_f64().unwrap() - x).abs() < 1e-12;
    assert!(close(&a["DR"], 1.0 / 3.0));
    assert!(close(&a["RA"], 0.5));
    assert!(close(&a["FM"], 0.4));
    assert!(close(&a["AP"], 2.5 / 11.0));
    assert!(close(&a["mAP"], 2.5 / 11.0));
    assert_eq!(r["per_image"][1]["precision"], 0.0);

    // The half overlap covers half of its ground truth, still below 0.8.
    let r2 = tmp.path().join("r2.json");
    assert!(
        evaluate(&gt, &det, &r2, &["--score-mode", "gt-coverage", "--ta", "0.5"])
            .status
            .success()
    );
    assert_eq!(json(&r2)["aggregate"]["o2o"], 2);
}

/// Line counts from the published evaluation table, spread over 60 images:
/// 2591 exact matches, 324 missed lines and 846 spurious detections.
#[test]
fn evaluate_published_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let (gt_dir, det_dir) = (tmp.path().join("gt"), tmp.path().join("det"));
    #[derive(Clone, Copy)]
    enum Kind {
        Both,
        GtOnly,
        DetOnly,
    }
    let kinds: Vec<Kind> = std::iter::repeat_n(Kind::Both, 2591)
        .chain(std::iter::repeat_n(Kind::GtOnly, 324))
        .chain(std::iter::repeat_n(Kind::DetOnly, 846))
        .collect();
    for (i, chunk) in kinds.chunks(kinds.len().div_ceil(60)).enumerate() {
        let (mut gt, mut det) = (Vec::new(), Vec::new());
        for (j, k) in chunk.iter().enumerate() {
            let b = bx(0, j * 10, 99, j * 10 + 5);
            match k {
                Kind::Both => {
                    gt.push(b);
                    det.push(b);
                }
                Kind::GtOnly => gt.push(b),
                Kind::DetOnly => det.push(b),
            }
        }
        let id = format!("1_{}", i + 1);
        write_ann(&gt_dir, &id, 100, 1000, gt);
        write_ann(&det_dir, &id, 100, 1000, det);
    }
    let report = tmp.path().join("r.json");
    assert!(evaluate(&gt_dir, &det_dir, &report, &[]).status.success());
    let a = &json(&report)["aggregate"];
    assert_eq!(
        (a["N"].as_u64(), a["M"].as_u64(), a["o2o"].as_u64()),
        (Some(2915), Some(3437), Some(2591))
    );
    let fm = a["FM"].as_f64().unwrap();
    assert!((fm - 0.8157).abs() <= 0.0005, "{fm}");
}
